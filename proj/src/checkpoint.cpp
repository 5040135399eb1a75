#include "ddp/checkpoint.hpp"

#include <cstring>
#include <map>

#include "ddp/array_io.hpp"

namespace ddp {

namespace {

constexpr char kMagic[4] = {'D', 'D', 'P', 'C'};
constexpr uint16_t kVersion = 1;

void put(std::vector<uint8_t>& out, uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<uint8_t>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  uint64_t get(int n) {
    need(n);
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::string text(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Array array() {
    size_t used = 0;
    Array a = decode_array(std::span<const uint8_t>(bytes_).subspan(pos_), &used);
    pos_ += used;
    return a;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(origin_ + ": " + what); }

 private:
  void need(size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
  }
  const std::vector<uint8_t>& bytes_;
  std::string origin_;
  size_t pos_ = 0;
};

std::vector<std::pair<std::string, const Matrix*>> named_tensors(const TrainState& state) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  const nn::Parameters& params = state.model.params();
  for (int i = 0; i < params.size(); ++i) out.emplace_back("param/" + params.param(i).name, &params[i]);
  for (int i = 0; i < params.size(); ++i) out.emplace_back("adam_m/" + params.param(i).name, &state.adam_m[i]);
  for (int i = 0; i < params.size(); ++i) out.emplace_back("adam_v/" + params.param(i).name, &state.adam_v[i]);
  return out;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, const TrainState& state) {
  const auto tensors = named_tensors(state);
  nlohmann::json manifest;
  manifest["format"] = "ddp-checkpoint";
  manifest["config"] = config.to_json();
  manifest["step"] = state.step;
  manifest["phase"] = to_string(state.phase);
  manifest["rng"] = state.rng.serialize();
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, m] : tensors) list.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}});
  manifest["tensors"] = list;
  const std::string text = manifest.dump();

  std::vector<uint8_t> bytes(kMagic, kMagic + 4);
  put(bytes, kVersion, 2);
  put(bytes, text.size(), 8);
  bytes.insert(bytes.end(), text.begin(), text.end());
  put(bytes, tensors.size(), 4);
  for (const auto& [name, m] : tensors) {
    put(bytes, name.size(), 2);
    bytes.insert(bytes.end(), name.begin(), name.end());
    const std::vector<uint8_t> blob = encode_array(to_array(*m));
    bytes.insert(bytes.end(), blob.begin(), blob.end());
  }
  // Write then rename so a crash never leaves a half-written checkpoint behind.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_file(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointContents read_checkpoint_contents(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = read_file(path);
  Reader r(bytes, path.string());
  if (r.text(4) != std::string(kMagic, 4)) r.fail("not a checkpoint (bad magic)");
  const uint64_t version = r.get(2);
  if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  CheckpointContents c;
  try {
    c.manifest = nlohmann::json::parse(r.text(r.get(8)));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("malformed manifest: ") + e.what());
  }
  if (!c.manifest.is_object() || c.manifest.value("format", "") != "ddp-checkpoint" ||
      !c.manifest.contains("tensors") || !c.manifest["tensors"].is_array())
    r.fail("manifest lacks the checkpoint format marker or tensor list");
  const uint64_t count = r.get(4);
  if (count != c.manifest["tensors"].size()) r.fail("tensor count disagrees with the manifest");
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = r.text(r.get(2));
    const auto& entry = c.manifest["tensors"][i];
    if (entry.value("name", "") != name) r.fail("tensor '" + name + "' out of manifest order");
    Matrix m = matrix_from_array(r.array());
    const auto shape = entry.at("shape");
    if (shape.size() != 2 || shape[0].get<int64_t>() != m.rows() || shape[1].get<int64_t>() != m.cols())
      r.fail("tensor '" + name + "' shape disagrees with the manifest");
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (!r.done()) r.fail("trailing bytes after the last tensor");
  return c;
}

void restore_state(TrainState& state, const CheckpointContents& contents) {
  const auto expected = named_tensors(state);
  std::map<std::string, const Matrix*> stored;
  for (const auto& [name, m] : contents.tensors) stored[name] = &m;
  for (const auto& [name, target] : expected) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("checkpoint is missing tensor '" + name + "'");
    const Matrix& src = *it->second;
    if (src.rows() != target->rows() || src.cols() != target->cols())
      throw FormatError("shape mismatch for tensor '" + name + "': checkpoint has " + std::to_string(src.rows()) +
                        "x" + std::to_string(src.cols()) + ", model expects " + std::to_string(target->rows()) +
                        "x" + std::to_string(target->cols()));
  }
  if (stored.size() != expected.size()) throw FormatError("checkpoint holds tensors the model does not have");
  nn::Parameters& params = state.model.params();
  for (int i = 0; i < params.size(); ++i) {
    const std::string& n = params.param(i).name;
    params[i] = *stored.at("param/" + n);
    state.adam_m[i] = *stored.at("adam_m/" + n);
    state.adam_v[i] = *stored.at("adam_v/" + n);
  }
  try {
    state.step = contents.manifest.at("step").get<int64_t>();
    state.phase = phase_from_string(contents.manifest.at("phase").get<std::string>());
    state.rng.deserialize(contents.manifest.at("rng").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const CheckpointContents contents = read_checkpoint_contents(path);
  ExperimentConfig config;
  try {
    config = ExperimentConfig::from_json(contents.manifest.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": checkpoint manifest: " + e.what());
  }
  Checkpoint ck{config, TrainState(Model(config.model_config(), config.seed), 0)};
  restore_state(ck.state, contents);
  return ck;
}

}  // namespace ddp
