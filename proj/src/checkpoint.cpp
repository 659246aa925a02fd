#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dan/training.hpp"

namespace dan {
namespace {

constexpr char kMagic[8] = {'D', 'A', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr char kTrailer[8] = {'D', 'A', 'N', 'E', 'N', 'D', '\0', '\0'};
constexpr uint64_t kMaxManifest = 1u << 24;
constexpr uint32_t kMaxName = 4096;
constexpr uint32_t kMaxDims = 8;

class Writer {
 public:
  explicit Writer(std::string& buf) : buf_(buf) {}

  void bytes(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::string& buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

  const char* take(size_t n) {
    if (n > buf_.size() - pos_) throw CorruptCheckpointError("checkpoint " + path_.string() + " is truncated");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(8));
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
  }
  std::string str(uint32_t limit) {
    const uint32_t n = u32();
    if (n > limit) throw CorruptCheckpointError("checkpoint " + path_.string() + " has an oversized string");
    return std::string(take(n), n);
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  const std::filesystem::path& path_;
  size_t pos_ = 0;
};

std::string build_manifest(const CheckpointData& data) {
  std::ostringstream m;
  m << "iteration=" << data.iteration << '\n' << "optimizer_steps=" << data.optimizer_steps << '\n';
  for (const auto& [key, value] : data.config) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw ArgumentError("checkpoint: config entry '" + key + "' cannot be stored");
    }
    m << "config." << key << '=' << value << '\n';
  }
  return m.str();
}

void parse_manifest(const std::string& text, CheckpointData& data, const std::filesystem::path& path) {
  std::istringstream in(text);
  std::string line;
  bool have_iter = false;
  bool have_steps = false;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptCheckpointError("checkpoint " + path.string() + ": bad manifest line");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "iteration") {
        data.iteration = std::stoll(value);
        have_iter = true;
      } else if (key == "optimizer_steps") {
        data.optimizer_steps = std::stoll(value);
        have_steps = true;
      } else if (key.rfind("config.", 0) == 0) {
        data.config.emplace_back(key.substr(7), value);
      } else {
        throw CorruptCheckpointError("checkpoint " + path.string() + ": unknown manifest key " + key);
      }
    } catch (const std::logic_error&) {
      throw CorruptCheckpointError("checkpoint " + path.string() + ": bad manifest value for " + key);
    }
  }
  if (!have_iter || !have_steps) throw CorruptCheckpointError("checkpoint " + path.string() + ": incomplete manifest");
}

}  // namespace

bool CheckpointData::has_prefix(const std::string& prefix) const {
  for (const auto& [name, t] : tensors) {
    if (name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

std::map<std::string, Tensor> CheckpointData::tensor_map() const {
  return {tensors.begin(), tensors.end()};
}

std::optional<std::string> CheckpointData::config_value(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  static_assert(std::endian::native == std::endian::little, "float payloads are written in host order");
  std::string buf;
  Writer w(buf);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  const std::string manifest = build_manifest(data);
  w.u64(manifest.size());
  w.bytes(manifest.data(), manifest.size());
  w.u32(static_cast<uint32_t>(data.tensors.size()));
  for (const auto& [name, tensor] : data.tensors) {
    if (name.empty() || name.size() > kMaxName) throw ArgumentError("checkpoint: bad tensor name '" + name + "'");
    const Tensor t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    w.str(name);
    w.u32(static_cast<uint32_t>(t.dim()));
    for (int64_t d : t.sizes()) w.u64(static_cast<uint64_t>(d));
    w.bytes(t.data_ptr<float>(), static_cast<size_t>(t.numel()) * sizeof(float));
  }
  w.bytes(kTrailer, sizeof kTrailer);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf, path);

  if (buf.size() < sizeof kMagic || std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
    throw CorruptCheckpointError(path.string() + " is not a checkpoint");
  }
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IncompatibleCheckpointError("checkpoint " + path.string() + " has format version " +
                                      std::to_string(version) + ", expected " +
                                      std::to_string(kCheckpointVersion));
  }
  CheckpointData data;
  const uint64_t manifest_size = r.u64();
  if (manifest_size > kMaxManifest) throw CorruptCheckpointError("checkpoint " + path.string() + ": manifest too large");
  parse_manifest(std::string(r.take(manifest_size), manifest_size), data, path);

  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(kMaxName);
    const uint32_t ndim = r.u32();
    if (ndim > kMaxDims) throw CorruptCheckpointError("checkpoint " + path.string() + ": bad rank for " + name);
    std::vector<int64_t> dims;
    uint64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const uint64_t size = r.u64();
      if (size > (1ull << 32)) throw CorruptCheckpointError("checkpoint " + path.string() + ": bad size for " + name);
      dims.push_back(static_cast<int64_t>(size));
      numel *= size;
    }
    if (numel > buf.size()) throw CorruptCheckpointError("checkpoint " + path.string() + " is truncated");
    const char* payload = r.take(numel * sizeof(float));
    Tensor t = torch::empty(dims, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), payload, numel * sizeof(float));
    data.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (std::memcmp(r.take(sizeof kTrailer), kTrailer, sizeof kTrailer) != 0 || !r.done()) {
    throw CorruptCheckpointError("checkpoint " + path.string() + " has a bad trailer");
  }
  return data;
}

CheckpointData capture_checkpoint(DanModel& model, const Adam* optimizer, int64_t iteration,
                                  std::vector<std::pair<std::string, std::string>> config) {
  CheckpointData data;
  data.iteration = iteration;
  data.config = std::move(config);
  for (const auto& item : model->named_parameters()) data.tensors.emplace_back(item.key(), item.value().detach().clone());
  if (optimizer) {
    data.optimizer_steps = optimizer->steps();
    for (auto& [name, t] : optimizer->state()) data.tensors.emplace_back(name, t.detach().clone());
  }
  return data;
}

void restore_model(DanModel& model, const CheckpointData& data) {
  torch::NoGradGuard no_grad;
  const auto tensors = data.tensor_map();
  for (auto& item : model->named_parameters()) {
    auto it = tensors.find(item.key());
    if (it == tensors.end()) throw IncompatibleCheckpointError("checkpoint lacks parameter " + item.key());
    if (it->second.sizes() != item.value().sizes()) {
      throw IncompatibleCheckpointError("parameter " + item.key() + " is " + shape_string(it->second) +
                                        " in the checkpoint but " + shape_string(item.value()) + " in the model");
    }
    item.value().copy_(it->second);
  }
}

}  // namespace dan
