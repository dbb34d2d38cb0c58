#include "trajformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "trajformer/config.hpp"
#include "trajformer/error.hpp"

namespace trajformer {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'T', 'R', 'J', 'F', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t& pos) {
  if (bytes.size() < pos + sizeof(T)) throw CheckpointError("checkpoint is truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

struct Entry {
  std::string group;
  std::string name;
  const Tensor* tensor;
};

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<Entry> entries;
  for (const auto& [name, t] : ckpt.params) entries.push_back({"param", name, &t});
  if (ckpt.adam) {
    for (const auto& [name, t] : ckpt.adam->m) entries.push_back({"adam.m", name, &t});
    for (const auto& [name, t] : ckpt.adam->v) entries.push_back({"adam.v", name, &t});
  }

  json index = json::array();
  std::size_t offset = 0;
  for (const auto& e : entries) {
    index.push_back({{"group", e.group},
                     {"name", e.name},
                     {"shape", e.tensor->shape()},
                     {"offset", offset}});
    offset += e.tensor->size();
  }

  json header;
  header["model"] = ckpt.model;
  header["normalization"] = ckpt.norm;
  header["train"] = ckpt.train;
  header["adam_step"] = ckpt.adam ? json(ckpt.adam->step) : json(nullptr);
  header["rng_state"] = ckpt.rng_state;
  header["step"] = ckpt.step;
  header["infill_steps"] = ckpt.infill_steps;
  header["epoch"] = ckpt.epoch;
  header["batch_in_epoch"] = ckpt.batch_in_epoch;
  header["epoch_loss_sum"] = ckpt.epoch_loss_sum;
  header["epoch_loss_count"] = ckpt.epoch_loss_count;
  header["history"] = ckpt.history;
  header["tensors"] = std::move(index);
  header["payload_doubles"] = offset;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset * sizeof(double) + sizeof(std::uint64_t));
  for (const auto& e : entries) {
    const auto data = e.tensor->data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  if (bytes.size() < sizeof(kMagic) + 12 + sizeof(std::uint64_t)) {
    throw CheckpointError("checkpoint is truncated");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::size_t tail = body;
  const auto stored = get<std::uint64_t>(bytes, tail);
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get<std::uint64_t>(bytes, pos);
  if (header_len > body - pos) throw CheckpointError("checkpoint is truncated");
  if (fnv1a64(bytes.substr(0, body)) != stored) {
    throw CheckpointError("checkpoint is corrupt (checksum mismatch)");
  }

  Checkpoint c;
  try {
    const json header = json::parse(bytes.substr(pos, header_len));
    pos += header_len;
    const std::size_t payload = header.at("payload_doubles").get<std::size_t>();
    if ((body - pos) != payload * sizeof(double)) {
      throw CheckpointError("checkpoint payload size does not match its index");
    }
    const char* base = bytes.data() + pos;

    c.model = header.at("model").get<ModelConfig>();
    c.norm = header.at("normalization").get<NormalizationParams>();
    c.train = header.at("train").get<TrainConfig>();
    if (!header.at("adam_step").is_null()) {
      c.adam = AdamState{};
      c.adam->step = header.at("adam_step").get<std::uint64_t>();
    }
    c.rng_state = header.at("rng_state").get<std::string>();
    c.step = header.at("step").get<std::uint64_t>();
    c.infill_steps = header.at("infill_steps").get<std::uint64_t>();
    c.epoch = header.at("epoch").get<std::uint64_t>();
    c.batch_in_epoch = header.at("batch_in_epoch").get<std::uint64_t>();
    c.epoch_loss_sum = header.at("epoch_loss_sum").get<double>();
    c.epoch_loss_count = header.at("epoch_loss_count").get<std::uint64_t>();
    c.history = header.at("history").get<std::vector<MetricRecord>>();

    for (const auto& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const std::size_t n = numel(shape);
      if (offset > payload || n > payload - offset) {
        throw CheckpointError("tensor index points outside the payload");
      }
      std::vector<double> values(n);
      std::memcpy(values.data(), base + offset * sizeof(double), n * sizeof(double));
      Tensor t(shape, std::move(values));
      const auto group = e.at("group").get<std::string>();
      const auto name = e.at("name").get<std::string>();
      if (group == "param") {
        c.params[name] = std::move(t);
      } else if (c.adam && group == "adam.m") {
        c.adam->m[name] = std::move(t);
      } else if (c.adam && group == "adam.v") {
        c.adam->v[name] = std::move(t);
      } else {
        throw CheckpointError("unknown tensor group '" + group + "'");
      }
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint header is invalid: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  Checkpoint c = deserialize_checkpoint(ss.str());
  if (expected != nullptr && !(c.model == *expected)) {
    throw CheckpointError("checkpoint '" + path.string() +
                          "' was trained with a different model config: " +
                          json(c.model).dump() + " vs " + json(*expected).dump());
  }
  return c;
}

std::uint64_t checkpoint_hash(const Checkpoint& ckpt) {
  return fnv1a64(serialize_checkpoint(ckpt));
}

}  // namespace trajformer
