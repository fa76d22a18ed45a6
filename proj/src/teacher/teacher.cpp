#include "eve/teacher/teacher.hpp"

#include <cmath>

#include "eve/data/binary.hpp"

namespace eve::teacher {

using num::Var;

void TeacherConfig::validate() const {
  if (patch == 0 || resolution == 0 || resolution % patch != 0) {
    throw std::invalid_argument("teacher: resolution " + std::to_string(resolution) +
                                " is not divisible by patch " + std::to_string(patch));
  }
  if (heads == 0 || d_t % heads != 0) {
    throw std::invalid_argument("teacher: width " + std::to_string(d_t) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (n_layers_t == 0) throw std::invalid_argument("teacher: needs at least one layer");
}

num::Tensor<float> teacher_preprocess(const data::Image& raw, std::size_t resolution) {
  if (raw.height == 0 || raw.width == 0) throw data::InputError("teacher: empty image");
  const std::size_t side = std::max(raw.height, raw.width);
  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < raw.height * raw.width; ++i)
    for (std::size_t c = 0; c < 3; ++c) mean[c] += raw.rgb[i * 3 + c];
  const double count = static_cast<double>(raw.height * raw.width);
  data::Image square(side, side, static_cast<std::uint8_t>(std::lround(mean[0] / count)),
                     static_cast<std::uint8_t>(std::lround(mean[1] / count)),
                     static_cast<std::uint8_t>(std::lround(mean[2] / count)));
  const std::size_t oy = (side - raw.height) / 2, ox = (side - raw.width) / 2;
  for (std::size_t y = 0; y < raw.height; ++y)
    for (std::size_t x = 0; x < raw.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) square.at(y + oy, x + ox, c) = raw.at(y, x, c);
  return data::resize_to_tensor(square, resolution, resolution);
}

template <class T>
TeacherEncoder<T>::TeacherEncoder(const TeacherConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_t, p = cfg_.patch, n = cfg_.grid() * cfg_.grid();
  const std::size_t hidden = cfg_.mlp_mult * d;
  const std::uint64_t seed = cfg_.seed;
  const double d_std = 1.0 / std::sqrt(static_cast<double>(d));
  num::add_normal(store_, "teacher.patch.weight", {d, 3, p, p}, 1.0 / std::sqrt(3.0 * p * p), seed);
  num::add_filled(store_, "teacher.patch.bias", {d}, T{0});
  num::add_normal(store_, "teacher.cls", {1, d}, 0.02, seed);
  num::add_normal(store_, "teacher.pos", {n + 1, d}, 0.02, seed);
  for (std::size_t l = 0; l < cfg_.n_layers_t; ++l) {
    const std::string pre = "teacher.blocks." + std::to_string(l);
    num::add_filled(store_, pre + ".ln1.weight", {d}, T{1});
    num::add_filled(store_, pre + ".ln1.bias", {d}, T{0});
    num::MultiHeadAttention<T>::create(store_, pre + ".attn", d, cfg_.heads, seed, d_std);
    num::add_filled(store_, pre + ".ln2.weight", {d}, T{1});
    num::add_filled(store_, pre + ".ln2.bias", {d}, T{0});
    num::add_normal(store_, pre + ".fc1.weight", {hidden, d}, d_std, seed);
    num::add_filled(store_, pre + ".fc1.bias", {hidden}, T{0});
    num::add_normal(store_, pre + ".fc2.weight", {d, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), seed);
    num::add_filled(store_, pre + ".fc2.bias", {d}, T{0});
  }
  num::add_filled(store_, "teacher.ln_final.weight", {d}, T{1});
  num::add_filled(store_, "teacher.ln_final.bias", {d}, T{0});
  bind();
}

template <class T>
TeacherEncoder<T>::TeacherEncoder(const TeacherConfig& cfg,
                                  const std::map<std::string, num::Tensor<T>>& tensors)
    : TeacherEncoder(cfg) {
  for (auto& [name, var] : store_.entries()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw data::FormatError("teacher: missing tensor '" + name + "'");
    if (it->second.shape() != var.shape()) {
      throw num::ShapeError("teacher: tensor '" + name + "' has shape " +
                            num::to_string(it->second.shape()) + ", expected " +
                            num::to_string(var.shape()));
    }
    var.mutable_value() = it->second;
  }
}

template <class T>
void TeacherEncoder<T>::bind() {
  auto get = [&](const std::string& n) { return store_.get(n); };
  patch_w_ = get("teacher.patch.weight");
  patch_b_ = get("teacher.patch.bias");
  cls_ = get("teacher.cls");
  pos_ = get("teacher.pos");
  lnf_w_ = get("teacher.ln_final.weight");
  lnf_b_ = get("teacher.ln_final.bias");
  blocks_.clear();
  for (std::size_t l = 0; l < cfg_.n_layers_t; ++l) {
    const std::string pre = "teacher.blocks." + std::to_string(l);
    Block b;
    b.ln1_w = get(pre + ".ln1.weight");
    b.ln1_b = get(pre + ".ln1.bias");
    b.attn.heads = cfg_.heads;
    b.attn.wq = get(pre + ".attn.wq");
    b.attn.wk = get(pre + ".attn.wk");
    b.attn.wv = get(pre + ".attn.wv");
    b.attn.wo = get(pre + ".attn.wo");
    b.ln2_w = get(pre + ".ln2.weight");
    b.ln2_b = get(pre + ".ln2.bias");
    b.fc1_w = get(pre + ".fc1.weight");
    b.fc1_b = get(pre + ".fc1.bias");
    b.fc2_w = get(pre + ".fc2.weight");
    b.fc2_b = get(pre + ".fc2.bias");
    blocks_.push_back(std::move(b));
  }
}

template <class T>
TeacherFeatures TeacherEncoder<T>::encode(const num::Tensor<T>& image) const {
  const std::size_t R = cfg_.resolution;
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != R || image.dim(2) != R) {
    throw num::ShapeError("teacher: expected a 3 x " + std::to_string(R) + " x " + std::to_string(R) +
                          " image, got " + num::to_string(image.shape()));
  }
  num::NoGradGuard frozen;
  const std::size_t g = cfg_.grid(), n = g * g;
  const Var<T> patches = num::conv2d_patchify(image, patch_w_, patch_b_, cfg_.patch);
  const std::vector<Var<T>> parts{cls_, patches};
  Var<T> x = num::add(num::concat_rows<T>(parts), pos_);
  const auto all = num::KeySets::full(n + 1, n + 1);
  for (const Block& b : blocks_) {
    const Var<T> h = num::layer_norm(x, b.ln1_w, b.ln1_b);
    x = num::add(x, b.attn.forward(h, h, all));
    const Var<T> m = num::layer_norm(x, b.ln2_w, b.ln2_b);
    x = num::add(x, num::linear(num::gelu(num::linear(m, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b));
  }
  x = num::layer_norm(x, lnf_w_, lnf_b_);
  std::vector<std::size_t> patch_rows(n);
  for (std::size_t i = 0; i < n; ++i) patch_rows[i] = i + 1;  // drop <CLS>
  const Var<T> feats = num::l2_normalize_rows(num::gather_rows<T>(x, patch_rows));
  TeacherFeatures out;
  out.grid = feats.value().template cast<float>();
  out.h_t = g;
  out.w_t = g;
  return out;
}

template class TeacherEncoder<float>;
template class TeacherEncoder<double>;

namespace {
constexpr std::string_view kFeatureMagic = "EVETF001";
}

void write_feature_file(const std::filesystem::path& path, const FeatureTable& table) {
  data::ByteWriter w;
  w.raw(kFeatureMagic);
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& [id, f] : table) {
    w.str(id);
    w.u32(static_cast<std::uint32_t>(f.h_t));
    w.u32(static_cast<std::uint32_t>(f.w_t));
    w.u32(static_cast<std::uint32_t>(f.d_t()));
    w.f32s(f.grid.span());
  }
  data::write_file_bytes(path, w.bytes());
}

FeatureTable read_feature_file(const std::filesystem::path& path) {
  const auto bytes = data::read_file_bytes(path);
  data::ByteReader r(bytes);
  if (r.raw(kFeatureMagic.size()) != kFeatureMagic) {
    throw data::FormatError(path.string() + ": not a teacher-feature file");
  }
  FeatureTable table;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string id = r.str();
    TeacherFeatures f;
    f.h_t = r.u32();
    f.w_t = r.u32();
    const std::size_t d = r.u32();
    if (f.h_t == 0 || f.w_t == 0 || d == 0) throw data::FormatError(path.string() + ": empty record '" + id + "'");
    f.grid = num::Tensor<float>({f.h_t * f.w_t, d});
    r.f32s(f.grid.span());
    table.emplace(std::move(id), std::move(f));
  }
  if (!r.at_end()) throw data::FormatError(path.string() + ": trailing bytes");
  return table;
}

}  // namespace eve::teacher
