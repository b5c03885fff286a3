#include "sldb/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace sldb {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'L', 'D', 'B'};

template <typename V>
void put(std::vector<std::uint8_t>& out, V value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(V));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointTruncatedError("checkpoint truncated at byte " + std::to_string(pos_) + " while reading " +
                                     what);
  }
  template <typename V>
  V get(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint64_t>(what);
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::vector<std::uint8_t> get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

}  // namespace

std::size_t StoredTensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
Tensor<T> StoredTensor::as() const {
  std::vector<T> values(numel());
  if (dtype == dtype_of<T>()) {
    std::memcpy(values.data(), bytes.data(), bytes.size());
  } else if (dtype == DType::f32) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      float f;
      std::memcpy(&f, bytes.data() + 4 * i, 4);
      values[i] = static_cast<T>(f);
    }
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      double f;
      std::memcpy(&f, bytes.data() + 8 * i, 8);
      values[i] = static_cast<T>(f);
    }
  }
  return Tensor<T>(shape, std::move(values));
}

template <typename T>
StoredTensor StoredTensor::from(const std::string& name, const Shape& shape, const std::vector<T>& values) {
  StoredTensor s;
  s.name = name;
  s.dtype = dtype_of<T>();
  s.shape = shape;
  s.bytes.resize(values.size() * sizeof(T));
  std::memcpy(s.bytes.data(), values.data(), s.bytes.size());
  return s;
}

template <typename T>
StoredTensor StoredTensor::from(const std::string& name, const Tensor<T>& tensor) {
  return from(name, tensor.shape(), std::vector<T>(tensor.data().begin(), tensor.data().end()));
}

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, metadata);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.bytes.size() != t.numel() * dtype_size(t.dtype))
      throw CheckpointError("checkpoint tensor '" + t.name + "' has inconsistent byte size");
    put_string(out, t.name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointMagicError("not a checkpoint: bad magic");
  Reader r(bytes);
  r.get<std::uint32_t>("magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint version " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  Checkpoint c;
  c.metadata = r.get_string("metadata");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.get_string("tensor name");
    const auto tag = r.get<std::uint8_t>("dtype");
    if (tag > 1) throw CheckpointError("checkpoint tensor '" + t.name + "': unknown dtype " + std::to_string(tag));
    t.dtype = static_cast<DType>(tag);
    const auto rank = r.get<std::uint32_t>("rank");
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.get<std::uint64_t>("dims"));
    t.bytes = r.get_bytes(t.numel() * dtype_size(t.dtype), "tensor data");
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes at " + std::to_string(r.pos()));
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = checkpoint.serialize();
  // Write beside the target and rename, so a crash never leaves half a file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return Checkpoint::deserialize(bytes);
  } catch (const CheckpointMagicError& e) {
    throw CheckpointMagicError(path.string() + ": " + e.what());
  } catch (const CheckpointVersionError& e) {
    throw CheckpointVersionError(path.string() + ": " + e.what());
  } catch (const CheckpointTruncatedError& e) {
    throw CheckpointTruncatedError(path.string() + ": " + e.what());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template <typename T>
void restore_parameters(const Checkpoint& checkpoint, const ParameterList<T>& params) {
  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& p : params) by_name[p.name] = &p.tensor;
  std::vector<std::string> mismatched;
  std::map<std::string, const StoredTensor*> found;
  for (const auto& t : checkpoint.tensors) {
    if (t.name.rfind("adamw.", 0) == 0) continue;
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw UnknownTensorError("checkpoint tensor '" + t.name + "' is not a model parameter");
    if (it->second->shape() != t.shape)
      mismatched.push_back(t.name + " " + shape_str(t.shape) + " vs model " + shape_str(it->second->shape()));
    found[t.name] = &t;
  }
  for (const auto& p : params)
    if (!found.count(p.name)) mismatched.push_back(p.name + " missing from checkpoint");
  if (!mismatched.empty()) {
    std::string what = "checkpoint does not match the model:";
    for (const auto& m : mismatched) what += "\n  " + m;
    throw CompatibilityError(what, mismatched);
  }
  for (const auto& p : params) {
    auto values = found[p.name]->template as<T>();
    Tensor<T> dst = p.tensor;
    std::copy(values.data().begin(), values.data().end(), dst.data().begin());
  }
}

#define SLDB_INSTANTIATE_CHECKPOINT(T)                                                               \
  template Tensor<T> StoredTensor::as<T>() const;                                                    \
  template StoredTensor StoredTensor::from<T>(const std::string&, const Tensor<T>&);                 \
  template StoredTensor StoredTensor::from<T>(const std::string&, const Shape&, const std::vector<T>&); \
  template void restore_parameters(const Checkpoint&, const ParameterList<T>&);

SLDB_INSTANTIATE_CHECKPOINT(float)
SLDB_INSTANTIATE_CHECKPOINT(double)

}  // namespace sldb
