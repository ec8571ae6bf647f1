#include "casc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "casc/errors.hpp"

namespace casc {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'S', 'C', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

uint8_t dtype_code(torch::Dtype dtype) {
  switch (dtype) {
    case torch::kFloat: return 0;
    case torch::kDouble: return 1;
    case torch::kLong: return 2;
    case torch::kByte: return 3;
    default: throw ArgumentError("checkpoint: unsupported dtype " + std::string(c10::toString(dtype)));
  }
}

torch::Dtype dtype_from_code(uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat;
    case 1: return torch::kDouble;
    case 2: return torch::kLong;
    case 3: return torch::kByte;
    default: throw FormatError("checkpoint: unknown dtype code " + std::to_string(code));
  }
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const uint8_t*>(&value);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& in) : in_(in) {}
  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const uint8_t* take(size_t n) {
    if (pos_ + n > in_.size()) throw FormatError("checkpoint: truncated archive");
    const uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<uint8_t>& in_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.put<uint32_t>(kVersion);
  const std::string text = manifest.dump();
  w.put<uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  w.put<uint64_t>(arrays.size());
  for (const auto& [name, tensor] : arrays) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    w.put<uint32_t>(static_cast<uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<uint8_t>(dtype_code(t.scalar_type()));
    w.put<uint32_t>(static_cast<uint32_t>(t.dim()));
    for (int64_t d : t.sizes()) w.put<int64_t>(d);
    const uint64_t nbytes = t.numel() * t.element_size();
    w.put<uint64_t>(nbytes);
    w.bytes(t.data_ptr(), nbytes);
  }
  return w.take();
}

Checkpoint Checkpoint::deserialize(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  if (const auto version = r.get<uint32_t>(); version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto manifest_len = r.get<uint64_t>();
  const auto* text = reinterpret_cast<const char*>(r.take(manifest_len));
  ckpt.manifest = nlohmann::json::parse(text, text + manifest_len);
  const auto count = r.get<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<uint32_t>();
    const auto* name = reinterpret_cast<const char*>(r.take(name_len));
    const auto dtype = dtype_from_code(r.get<uint8_t>());
    const auto rank = r.get<uint32_t>();
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = r.get<int64_t>();
    const auto nbytes = r.get<uint64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (static_cast<uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw FormatError("checkpoint: size mismatch for " + std::string(name, name_len));
    }
    std::memcpy(t.data_ptr(), r.take(nbytes), nbytes);
    ckpt.arrays.emplace(std::string(name, name_len), std::move(t));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint not found: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void Checkpoint::store_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters()) arrays[prefix + "." + p.key()] = p.value().detach().clone();
  for (const auto& b : module.named_buffers()) arrays[prefix + "." + b.key()] = b.value().detach().clone();
}

void Checkpoint::restore_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  auto restore = [&](const std::string& key, torch::Tensor& target) {
    auto it = arrays.find(prefix + "." + key);
    if (it == arrays.end()) throw ConfigError("checkpoint: missing array " + prefix + "." + key);
    if (!it->second.sizes().equals(target.sizes())) {
      throw ConfigError("checkpoint: shape mismatch for " + prefix + "." + key + ": " +
                        c10::str(it->second.sizes()) + " vs " + c10::str(target.sizes()));
    }
    target.copy_(it->second);
  };
  for (auto& p : module.named_parameters()) restore(p.key(), p.value());
  for (auto& b : module.named_buffers()) restore(b.key(), b.value());
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  auto it = arrays.lower_bound(prefix + ".");
  return it != arrays.end() && it->first.rfind(prefix + ".", 0) == 0;
}

}  // namespace casc
