#include "eve/training/checkpoint.hpp"

#include "eve/data/binary.hpp"

namespace eve::train {

namespace {
constexpr std::string_view kMagic{"EVECKPT\0", 8};
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointRecord& c) {
  data::ByteWriter w;
  w.raw(kMagic);
  w.u32(c.version);
  w.str(c.config_text);
  w.u32(c.stage);
  w.u8(c.stage_complete ? 1 : 0);
  w.u64(c.step);
  w.str(c.rng_state);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.f32s(t.span());
  }
  w.u64(c.optimizer.step);
  w.u32(static_cast<std::uint32_t>(c.optimizer.m.size()));
  for (const auto& [name, m] : c.optimizer.m) {
    const auto& v = c.optimizer.v.at(name);
    w.str(name);
    w.u64(m.size());
    for (double x : m) w.f64(x);
    for (double x : v) w.f64(x);
  }
  return w.bytes();
}

CheckpointRecord decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  data::ByteReader r(bytes);
  if (r.remaining() < kMagic.size() || r.raw(kMagic.size()) != kMagic) {
    throw data::FormatError("not a checkpoint file");
  }
  CheckpointRecord c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion) {
    throw data::FormatError("unsupported checkpoint version " + std::to_string(c.version));
  }
  c.config_text = r.str();
  c.stage = r.u32();
  c.stage_complete = r.u8() != 0;
  c.step = r.u64();
  c.rng_state = r.str();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    num::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (rank == 0 || num::numel(shape) == 0 || num::numel(shape) * 4 > r.remaining()) {
      throw data::FormatError("checkpoint tensor '" + name + "' has a bad shape");
    }
    num::Tensor<float> t(shape);
    r.f32s(t.span());
    c.tensors.emplace(std::move(name), std::move(t));
  }
  c.optimizer.step = r.u64();
  const std::uint32_t moments = r.u32();
  for (std::uint32_t i = 0; i < moments; ++i) {
    std::string name = r.str();
    const std::uint64_t len = r.u64();
    if (len * 16 > r.remaining()) throw data::FormatError("checkpoint moment '" + name + "' is truncated");
    std::vector<double> m(len), v(len);
    for (double& x : m) x = r.f64();
    for (double& x : v) x = r.f64();
    c.optimizer.m.emplace(name, std::move(m));
    c.optimizer.v.emplace(std::move(name), std::move(v));
  }
  if (!r.at_end()) throw data::FormatError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointRecord& c) {
  data::write_file_bytes(path, encode_checkpoint(c));
}

CheckpointRecord load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw data::FormatError("checkpoint '" + path.string() + "' does not exist");
  try {
    return decode_checkpoint(data::read_file_bytes(path));
  } catch (const data::FormatError& e) {
    throw data::FormatError(path.string() + ": " + e.what());
  }
}

void snapshot_params(const num::ParamStore<float>& store, std::map<std::string, num::Tensor<float>>& out) {
  for (const auto& [name, var] : store.entries()) out.insert_or_assign(name, var.value());
}

}  // namespace eve::train
