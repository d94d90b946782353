#include "cinformer/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "cinformer/errors.hpp"

namespace cinformer {

namespace {

constexpr char kMagic[4] = {'C', 'I', 'N', 'T'};
const std::string kMomentM = "__adam_m__.";
const std::string kMomentV = "__adam_v__.";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  void need(std::size_t n, const char* what) {
    if (buf.size() - pos < n) {
      throw FormatError(std::string("checkpoint truncated reading ") + what + " at byte offset " +
                        std::to_string(pos));
    }
  }
  template <class U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf[pos + i]) << (8 * i));
    pos += sizeof(U);
    return v;
  }
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

std::size_t element_size(EntryType t) {
  switch (t) {
    case EntryType::kF32:
      return 4;
    case EntryType::kUtf8:
      return 1;
    case EntryType::kU64:
      return 8;
  }
  return 0;
}

CheckpointEntry f32_entry(const std::string& name, const Shape& shape, std::span<const float> values) {
  CheckpointEntry e;
  e.name = name;
  for (std::size_t d : shape) e.extents.push_back(static_cast<std::uint32_t>(d));
  Writer w;
  for (float f : values) w.le(std::bit_cast<std::uint32_t>(f));
  e.payload = std::move(w.out);
  return e;
}

std::vector<float> f32_values(const CheckpointEntry& e) {
  if (e.type != EntryType::kF32) throw FormatError("checkpoint entry " + e.name + " is not f32");
  std::vector<float> out(e.payload.size() / 4);
  Reader r(e.payload);
  for (float& f : out) f = std::bit_cast<float>(r.le<std::uint32_t>("f32"));
  return out;
}

Shape shape_of(const CheckpointEntry& e) { return Shape(e.extents.begin(), e.extents.end()); }

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw FormatError("checkpoint entry name too long: " + e.name);
    if (e.extents.size() > 0xFF) throw FormatError("checkpoint entry rank too large: " + e.name);
    std::size_t n = 1;
    for (std::uint32_t d : e.extents) n *= d;
    if (n * element_size(e.type) != e.payload.size()) {
      throw FormatError("checkpoint entry " + e.name + ": payload does not match extents");
    }
    w.le(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le(static_cast<std::uint8_t>(e.extents.size()));
    for (std::uint32_t d : e.extents) w.le(d);
    w.le(static_cast<std::uint8_t>(e.type));
    w.bytes(e.payload.data(), e.payload.size());
  }
  return std::move(w.out);
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError("not a checkpoint: bad magic");
  r.pos = 4;
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.le<std::uint32_t>("entry count");
  std::vector<CheckpointEntry> entries;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.le<std::uint16_t>("name length");
    r.need(len, "name");
    e.name.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + len));
    r.pos += len;
    if (!names.insert(e.name).second) throw FormatError("duplicate checkpoint entry " + e.name);
    const auto rank = r.le<std::uint8_t>("rank");
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      e.extents.push_back(r.le<std::uint32_t>("extent"));
      n *= e.extents.back();
    }
    const auto type = r.le<std::uint8_t>("dtype");
    if (type > 2) throw FormatError("checkpoint entry " + e.name + ": unknown dtype " + std::to_string(type));
    e.type = static_cast<EntryType>(type);
    const std::size_t size = n * element_size(e.type);
    r.need(size, "payload");
    e.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + size));
    r.pos += size;
    entries.push_back(std::move(e));
  }
  if (r.pos != bytes.size()) {
    throw FormatError("checkpoint has " + std::to_string(bytes.size() - r.pos) + " trailing bytes");
  }
  return entries;
}

std::vector<CheckpointEntry> checkpoint_entries(const TrainingState& state) {
  std::vector<CheckpointEntry> out;
  for (const auto& [path, e] : state.params) out.push_back(f32_entry(path, e.value.shape(), e.value.data()));
  for (const auto& [path, m] : state.optimizer.m) {
    const Shape& shape = state.params.get(path).shape();
    out.push_back(f32_entry(kMomentM + path, shape, m));
    out.push_back(f32_entry(kMomentV + path, shape, state.optimizer.v.at(path)));
  }
  {
    CheckpointEntry e{"__step__", {1}, EntryType::kU64, {}};
    Writer w;
    w.le(state.optimizer.step);
    e.payload = std::move(w.out);
    out.push_back(std::move(e));
  }
  const float best[1] = {state.best_miou};
  out.push_back(f32_entry("__best_miou__", {1}, best));
  const std::string json = to_json(state.config).dump();
  out.push_back({"__config__", {static_cast<std::uint32_t>(json.size())}, EntryType::kUtf8,
                 std::vector<std::uint8_t>(json.begin(), json.end())});
  return out;
}

TrainingState state_from_entries(const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*, std::less<>> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto find = [&by_name](const std::string& name) -> const CheckpointEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks entry " + name);
    return *it->second;
  };

  TrainingState state;
  const CheckpointEntry& cfg = find("__config__");
  if (cfg.type != EntryType::kUtf8) throw FormatError("__config__ is not UTF-8");
  try {
    state.config = config_from_json(nlohmann::json::parse(cfg.payload.begin(), cfg.payload.end()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("__config__: ") + e.what());
  }
  SeededRng rng(0);
  state.params = init_model_params(state.config.model, rng);
  std::size_t used = 3;
  for (auto& [path, e] : state.params) {
    const CheckpointEntry& src = find(path);
    if (shape_of(src) != e.value.shape()) {
      throw FormatError("checkpoint entry " + path + " has shape " + to_string(shape_of(src)) + ", expected " +
                        to_string(e.value.shape()));
    }
    const std::vector<float> v = f32_values(src);
    std::copy(v.begin(), v.end(), e.value.mutable_data().begin());
    ++used;
    if (!e.trainable) continue;
    for (const auto& [prefix, moments] : {std::pair{&kMomentM, &state.optimizer.m}, {&kMomentV, &state.optimizer.v}}) {
      const CheckpointEntry& me = find(*prefix + path);
      if (shape_of(me) != e.value.shape()) throw FormatError("moment " + me.name + " has the wrong shape");
      (*moments)[path] = f32_values(me);
      ++used;
    }
  }
  const CheckpointEntry& step = find("__step__");
  if (step.type != EntryType::kU64 || step.payload.size() != 8) throw FormatError("__step__ is not one u64");
  Reader r(step.payload);
  state.optimizer.step = r.le<std::uint64_t>("step");
  const CheckpointEntry& best = find("__best_miou__");
  const std::vector<float> b = f32_values(best);
  if (b.size() != 1) throw FormatError("__best_miou__ is not a scalar");
  state.best_miou = b[0];
  if (used != entries.size()) {
    throw FormatError("checkpoint has " + std::to_string(entries.size() - used) + " unrecognized entries");
  }
  return state;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

void save_checkpoint(const std::string& path, const TrainingState& state) {
  write_file_atomic(path, encode_checkpoint(checkpoint_entries(state)));
}

TrainingState load_checkpoint(const std::string& path) {
  try {
    return state_from_entries(decode_checkpoint(read_file(path)));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace cinformer
