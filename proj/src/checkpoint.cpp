#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dlab/config.hpp"
#include "dlab/error.hpp"
#include "dlab/trainer.hpp"

namespace dlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'D', 'L', 'A', 'B', '1'};
constexpr const char* kGenPrefix = "generator/";
constexpr const char* kDiscPrefix = "discriminator/";

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t offset, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)), pos_(offset) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_floats(std::vector<float>& out, std::size_t n) {
    if (n > (bytes_.size() - pos_) / sizeof(float)) fail();
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n) {
    if (n > bytes_.size() - pos_) fail();
  }
  [[noreturn]] void fail() const {
    throw CheckpointError(origin_ + ": truncated checkpoint (offset " + std::to_string(pos_) + ")");
  }

  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_;
};

void put_tensor(std::string& out, const std::string& prefix, const NamedTensor& t) {
  put_string(out, prefix + t.name);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) put<std::int64_t>(out, static_cast<std::int64_t>(d));
  out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
}

}  // namespace

std::vector<NamedTensor> snapshot(const ParamSet<float>& params) {
  std::vector<NamedTensor> out;
  const auto add = [&](const std::string& name, const Tensor<float>& t) {
    out.push_back({name, t.shape(), std::vector<float>(t.data(), t.data() + t.size())});
  };
  for (const auto& e : params.parameters()) add(e.name, e.tensor);
  for (const auto& [name, t] : params.buffers()) add(name, t);
  return out;
}

void restore(ParamSet<float>& params, const std::vector<NamedTensor>& tensors) {
  const std::size_t expected = params.parameters().size() + params.buffers().size();
  if (tensors.size() != expected) {
    throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(expected));
  }
  std::size_t i = 0;
  const auto assign = [&](const std::string& name, const Tensor<float>& t) {
    const NamedTensor& src = tensors[i++];
    if (src.name != name || src.shape != t.shape()) {
      throw CheckpointError("checkpoint tensor '" + src.name + "' " + shape_string(src.shape) +
                            " does not match model tensor '" + name + "' " + shape_string(t.shape()));
    }
    t.mutable_value() = Eigen::Map<const Array<float>>(src.values.data(), static_cast<Index>(src.values.size()));
  };
  for (const auto& e : params.parameters()) assign(e.name, e.tensor);
  for (const auto& [name, t] : params.buffers()) assign(name, t);
}

std::string serialize_checkpoint(const Checkpoint& c) {
  KeyValues kv;
  store(kv, c.generator);
  kv["has_discriminator"] = c.discriminator ? "true" : "false";
  if (c.discriminator) store(kv, *c.discriminator);
  store(kv, c.loss);
  store(kv, c.train);
  kv["step"] = std::to_string(c.step);
  kv["best_metric"] = format_double(c.best_metric);
  kv["classes"] = join_list(c.class_names);
  if (c.norm) {
    std::vector<std::string> m, s;
    for (double v : c.norm->mean) m.push_back(format_double(v));
    for (double v : c.norm->stddev) s.push_back(format_double(v));
    kv["norm_channels"] = join_list(c.norm->channel_names);
    kv["norm_mean"] = join_list(m);
    kv["norm_std"] = join_list(s);
  }

  std::string out(kMagic, sizeof kMagic);
  put<std::uint8_t>(out, Checkpoint::kVersion);
  put_string(out, format_key_values(kv));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.generator_tensors.size() + c.discriminator_tensors.size()));
  for (const auto& t : c.generator_tensors) put_tensor(out, kGenPrefix, t);
  for (const auto& t : c.discriminator_tensors) put_tensor(out, kDiscPrefix, t);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(origin + ": not a checkpoint (missing DLAB1 header)");
  }
  Reader r(bytes, sizeof kMagic, origin);
  const auto version = r.get<std::uint8_t>();
  if (version != Checkpoint::kVersion) {
    throw CheckpointError(origin + ": checkpoint format version " + std::to_string(version) +
                          " is incompatible with this build (expects " + std::to_string(Checkpoint::kVersion) + ")");
  }
  const KeyValues kv = parse_key_values(r.get_string(), origin + " (config block)");

  Checkpoint c;
  try {
    c.generator = generator_config(kv, 0, 0);
    if (kv_bool(kv, "has_discriminator")) c.discriminator = discriminator_config(kv, 0, 0);
    c.loss = loss_config(kv);
    c.train = train_config(kv);
    c.step = kv_int(kv, "step");
    c.best_metric = kv_double(kv, "best_metric");
    c.class_names = split_list(kv_string(kv, "classes"));
    if (kv.count("norm_mean")) {
      NormStats st;
      st.channel_names = split_list(kv_string(kv, "norm_channels"));
      for (const auto& v : split_list(kv_string(kv, "norm_mean"))) st.mean.push_back(kv_double({{"v", v}}, "v"));
      for (const auto& v : split_list(kv_string(kv, "norm_std"))) st.stddev.push_back(kv_double({{"v", v}}, "v"));
      c.norm = std::move(st);
    }
  } catch (const ConfigError& e) {
    throw CheckpointError(origin + ": bad config block: " + e.what());
  }

  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError(origin + ": implausible tensor rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::int64_t>();
      if (dim < 0 || dim > (std::int64_t{1} << 40)) throw CheckpointError(origin + ": bad tensor dimension");
      t.shape.push_back(static_cast<Index>(dim));
      n *= static_cast<std::size_t>(dim);
    }
    r.get_floats(t.values, n);
    if (name.rfind(kGenPrefix, 0) == 0) {
      t.name = name.substr(std::strlen(kGenPrefix));
      c.generator_tensors.push_back(std::move(t));
    } else if (name.rfind(kDiscPrefix, 0) == 0) {
      t.name = name.substr(std::strlen(kDiscPrefix));
      c.discriminator_tensors.push_back(std::move(t));
    } else {
      throw CheckpointError(origin + ": tensor '" + name + "' has no known owner prefix");
    }
  }
  if (!r.at_end()) throw CheckpointError(origin + ": trailing bytes after last tensor");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(c);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

Generator<float> generator_from(const Checkpoint& c) {
  Generator<float> g(c.generator, 0);
  restore(g.params(), c.generator_tensors);
  return g;
}

}  // namespace dlab
