// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "hpt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "hpt/error.hpp"
#include "hpt/rng.hpp"

namespace hpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', 'P', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void tensor(const std::string& name, const Shape& shape, const double* data) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    put<std::uint8_t>(kDtypeF64);
    put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(d);
    bytes(data, shape_numel(shape) * sizeof(double));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  template <class T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void read(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  }
  void need(std::size_t n) const {
    if (n > buf.size() - pos) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos));
  }
  bool done() const { return pos == buf.size(); }

  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

}  // namespace

nlohmann::ordered_json to_json(const EncoderConfig& c) {
  return {{"input_size", c.input_size},
          {"stage_widths", c.stage_widths},
          {"blocks_per_stage", c.blocks_per_stage},
          {"embed_dim", c.embed_dim},
          {"proj_dim", c.proj_dim}};
}

nlohmann::ordered_json to_json(const MoCoConfig& c) {
  return {{"proj_dim", c.proj_dim},         {"queue_size", c.queue_size},     {"momentum", c.momentum},
          {"temperature", c.temperature},   {"lr", c.lr},                     {"sgd_momentum", c.sgd_momentum},
          {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},     {"total_steps", c.total_steps}};
}

namespace {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("encoder config must be an object");
  EncoderConfig c;
  read_opt(j, "input_size", c.input_size);
  read_opt(j, "stage_widths", c.stage_widths);
  read_opt(j, "blocks_per_stage", c.blocks_per_stage);
  read_opt(j, "embed_dim", c.embed_dim);
  read_opt(j, "proj_dim", c.proj_dim);
  c.validate();
  return c;
}

MoCoConfig moco_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("moco config must be an object");
  MoCoConfig c;
  read_opt(j, "proj_dim", c.proj_dim);
  read_opt(j, "queue_size", c.queue_size);
  read_opt(j, "momentum", c.momentum);
  read_opt(j, "temperature", c.temperature);
  read_opt(j, "lr", c.lr);
  read_opt(j, "sgd_momentum", c.sgd_momentum);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "total_steps", c.total_steps);
  c.validate();
  return c;
}

std::vector<std::uint8_t> serialize(const Checkpoint& c) {
  const MoCoState& s = c.state;
  nlohmann::ordered_json meta = c.metadata;
  meta["engine"] = {{"encoder", to_json(s.q.config())},
                    {"moco", to_json(s.cfg)},
                    {"step", s.step},
                    {"queue_ptr", s.queue.ptr()}};

  std::size_t count = 2 * s.q.params().size() + 1;
  for (const auto& v : s.velocity)
    if (!v.empty()) ++count;

  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(count);
  for (const auto& e : s.q.params()) w.tensor("q." + e.name, e.tensor.shape(), e.tensor.data().data());
  for (const auto& e : s.k.params()) w.tensor("k." + e.name, e.tensor.shape(), e.tensor.data().data());
  w.tensor("queue", s.queue.buffer().shape(), s.queue.buffer().data().data());
  for (std::size_t i = 0; i < s.velocity.size(); ++i) {
    if (s.velocity[i].empty()) continue;
    const auto& e = s.q.params()[i];
    w.tensor("velocity." + e.name, e.tensor.shape(), s.velocity[i].data());
  }
  const std::string text = meta.dump();
  w.put<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  return std::move(w.out);
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");

  struct Raw {
    Shape shape;
    std::vector<double> data;
  };
  std::vector<std::pair<std::string, Raw>> tensors;
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto len = r.get<std::uint32_t>();
    std::string name(len, '\0');
    r.read(name.data(), len);
    if (r.get<std::uint8_t>() != kDtypeF64) throw CheckpointError("tensor " + name + ": unsupported dtype");
    const auto ndim = r.get<std::uint32_t>();
    if (ndim == 0 || ndim > 8) throw CheckpointError("tensor " + name + ": bad rank");
    Raw raw;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim == 0 || dim > (std::uint64_t{1} << 32)) throw CheckpointError("tensor " + name + ": bad dim");
      raw.shape.push_back(dim);
      numel *= dim;
    }
    r.need(numel * sizeof(double));
    raw.data.resize(numel);
    r.read(raw.data.data(), numel * sizeof(double));
    tensors.emplace_back(std::move(name), std::move(raw));
  }
  const auto meta_len = r.get<std::uint64_t>();
  r.need(meta_len);
  std::string text(meta_len, '\0');
  r.read(text.data(), meta_len);
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint metadata");

  Checkpoint c;
  try {
    c.metadata = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
  if (!c.metadata.contains("engine")) throw CheckpointError("checkpoint metadata lacks the engine block");
  const auto& engine = c.metadata["engine"];
  EncoderConfig ecfg;
  MoCoConfig mcfg;
  try {
    ecfg = encoder_config_from_json(engine.at("encoder"));
    mcfg = moco_config_from_json(engine.at("moco"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint engine block: ") + e.what());
  }

  std::map<std::string, Raw*> by_name;
  for (auto& [name, raw] : tensors) {
    if (!by_name.emplace(name, &raw).second) throw CheckpointError("duplicate tensor " + name);
  }
  std::size_t used = 0;
  auto take = [&](const std::string& name, const Shape& shape) -> Raw& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor " + name);
    if (it->second->shape != shape)
      throw CheckpointError("tensor " + name + " has shape " + shape_str(it->second->shape) + ", expected " +
                            shape_str(shape));
    ++used;
    return *it->second;
  };

  MoCoState& s = c.state;
  s.cfg = mcfg;
  s.q = Encoder(ecfg, 0);
  s.k = Encoder(ecfg, 0);
  for (auto* enc : {&s.q, &s.k}) {
    const std::string prefix = enc == &s.q ? "q." : "k.";
    for (auto& e : enc->params()) {
      Raw& raw = take(prefix + e.name, e.tensor.shape());
      e.tensor = Tensor(raw.shape, std::move(raw.data));
    }
  }
  Raw& q = take("queue", {mcfg.queue_size, mcfg.proj_dim});
  s.queue = Queue(Tensor(q.shape, std::move(q.data)), engine.value("queue_ptr", std::size_t{0}));
  s.step = engine.value("step", std::size_t{0});
  s.velocity.assign(s.q.params().size(), {});
  for (std::size_t i = 0; i < s.q.params().size(); ++i) {
    const auto& e = s.q.params()[i];
    if (!by_name.count("velocity." + e.name)) continue;
    s.velocity[i] = std::move(take("velocity." + e.name, e.tensor.shape()).data);
  }
  if (used != tensors.size()) throw CheckpointError("checkpoint holds tensors the encoder does not know");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("checkpoint not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

std::uint64_t checkpoint_hash(const Checkpoint& c) {
  const auto bytes = serialize(c);
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

void check_compatible(const Checkpoint& c, const EncoderConfig& cfg) {
  const Encoder ref(cfg, 0);
  const ParamSet& have = c.state.q.params();
  if (have.size() != ref.params().size())
    throw CheckpointError("checkpoint encoder has " + std::to_string(have.size()) + " tensors, config expects " +
                          std::to_string(ref.params().size()) + " (format v" + std::to_string(kCheckpointVersion) +
                          ")");
  for (std::size_t i = 0; i < have.size(); ++i) {
    const auto& a = have[i];
    const auto& b = ref.params()[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape())
      throw CheckpointError("checkpoint tensor " + a.name + " " + shape_str(a.tensor.shape()) +
                            " incompatible with " + b.name + " " + shape_str(b.tensor.shape()) + " (format v" +
                            std::to_string(kCheckpointVersion) + ")");
  }
}

}  // namespace hpt
