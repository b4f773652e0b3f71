#include "unicon/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace unicon {

int SceneSpec::label() const {
  if (shapes.empty()) return 0;
  const bool circle = std::any_of(shapes.begin(), shapes.end(), [](const SceneShape& s) {
    return s.kind == ShapeKind::circle;
  });
  return 2 * (static_cast<int>(std::min<std::size_t>(shapes.size(), 4)) - 1) + (circle ? 1 : 0);
}

SceneSpec sample_scene(std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).split(0x7363656e65);
  SceneSpec s;
  s.seed = seed;
  s.background = rng.uniform(0.0f, 0.15f);
  const int count = 1 + static_cast<int>(rng.below(4));
  for (int i = 0; i < count; ++i) {
    SceneShape shape;
    shape.kind = static_cast<ShapeKind>(rng.below(3));
    shape.cx = rng.uniform(6.0f, 26.0f);
    shape.cy = rng.uniform(6.0f, 26.0f);
    shape.intensity = rng.uniform(0.2f, 1.0f);
    shape.angle = rng.uniform(0.0f, static_cast<float>(std::numbers::pi));
    shape.aspect = rng.uniform(0.5f, 2.0f);
    shape.size = shape.kind == ShapeKind::line ? rng.uniform(6.0f, 13.0f) : rng.uniform(3.0f, 8.0f);
    s.shapes.push_back(shape);
  }
  return s;
}

namespace {

bool covers(const SceneShape& s, float x, float y) {
  const float dx = x - s.cx, dy = y - s.cy;
  switch (s.kind) {
    case ShapeKind::circle: return dx * dx + dy * dy <= s.size * s.size;
    case ShapeKind::rectangle: return std::abs(dx) <= s.size && std::abs(dy) <= s.size * s.aspect;
    case ShapeKind::line: {
      const float ux = std::cos(s.angle), uy = std::sin(s.angle);
      const float along = dx * ux + dy * uy, across = -dx * uy + dy * ux;
      return std::abs(along) <= s.size && std::abs(across) <= kLineHalfWidth;
    }
  }
  return false;
}

void check_image(const Tensor& t, const char* what) {
  if (t.rank() != 3 || t.dim(2) != 1) throw ShapeError(std::string(what) + ": expected [H, W, 1], got " + to_string(t.shape()));
}

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

// Correlation with a (2r+1)^2 kernel, reflect padding, double accumulation.
std::vector<double> filter(const Tensor& img, const std::vector<double>& kernel, int r) {
  const int H = static_cast<int>(img.dim(0)), W = static_cast<int>(img.dim(1)), k = 2 * r + 1;
  std::vector<double> out(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j)
          acc += kernel[(i + r) * k + (j + r)] * img.at(reflect(y + i, H) * W + reflect(x + j, W));
      out[y * W + x] = acc;
    }
  return out;
}

std::vector<double> gaussian_kernel(int r, double sigma) {
  const int k = 2 * r + 1;
  std::vector<double> w(static_cast<std::size_t>(k) * k);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) sum += w[(i + r) * k + (j + r)] = std::exp(-(i * i + j * j) / (2 * sigma * sigma));
  for (double& v : w) v /= sum;
  return w;
}

Tensor from_doubles(const std::vector<double>& v, std::int64_t H, std::int64_t W) {
  Tensor t({H, W, 1});
  for (std::size_t i = 0; i < v.size(); ++i) t.data()[i] = static_cast<float>(v[i]);
  return t;
}

}  // namespace

Tensor render_scene(const SceneSpec& spec, int size) {
  constexpr int kSub = 4;
  Tensor img({size, size, 1});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const float px = x + (sx + 0.5f) / kSub, py = y + (sy + 0.5f) / kSub;
          float v = spec.background;
          for (const SceneShape& s : spec.shapes)
            if (covers(s, px, py)) v = s.intensity;
          acc += v;
        }
      img.data()[y * size + x] = static_cast<float>(acc / (kSub * kSub));
    }
  return img;
}

std::string_view condition_name(ConditionKind kind) {
  switch (kind) {
    case ConditionKind::edge: return "edge";
    case ConditionKind::sr4x: return "sr4x";
    case ConditionKind::blur_sr4x: return "blur-sr4x";
  }
  return "edge";
}

ConditionKind parse_condition(std::string_view name) {
  for (auto k : {ConditionKind::edge, ConditionKind::sr4x, ConditionKind::blur_sr4x})
    if (condition_name(k) == name) return k;
  throw Error("unknown condition kind '" + std::string(name) + "'");
}

Tensor sr4x(const Tensor& image) {
  check_image(image, "sr4x");
  const auto H = image.dim(0), W = image.dim(1);
  if (H % 4 != 0 || W % 4 != 0) throw ShapeError("sr4x: size must be a multiple of 4");
  Tensor out(image.shape());
  for (std::int64_t ty = 0; ty < H; ty += 4)
    for (std::int64_t tx = 0; tx < W; tx += 4) {
      double sum = 0.0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) sum += image.at((ty + i) * W + tx + j);
      const auto mean = static_cast<float>(sum / 16.0);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) out.data()[(ty + i) * W + tx + j] = mean;
    }
  return out;
}

Tensor gaussian_blur(const Tensor& image) {
  check_image(image, "blur");
  static const std::vector<double> kernel = gaussian_kernel(4, 2.0);
  return from_doubles(filter(image, kernel, 4), image.dim(0), image.dim(1));
}

Tensor sobel_magnitude(const Tensor& image) {
  check_image(image, "sobel");
  static const std::vector<double> gx = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  static const std::vector<double> gy = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  const auto a = filter(image, gx, 1), b = filter(image, gy, 1);
  std::vector<double> m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = std::hypot(a[i], b[i]);
  return from_doubles(m, image.dim(0), image.dim(1));
}

Tensor edge_map(const Tensor& image) {
  const Tensor m = sobel_magnitude(image);
  const float peak = *std::max_element(m.values().begin(), m.values().end());
  Tensor out(m.shape());
  if (peak <= 1e-6f) return out;
  for (std::int64_t i = 0; i < m.numel(); ++i) out.data()[i] = m.at(i) / peak >= 0.2f ? 1.0f : 0.0f;
  return out;
}

Tensor make_condition(const Tensor& image, ConditionKind kind) {
  switch (kind) {
    case ConditionKind::edge: return edge_map(image);
    case ConditionKind::sr4x: return sr4x(image);
    case ConditionKind::blur_sr4x: return sr4x(gaussian_blur(image));
  }
  throw Error("unknown condition kind");
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  double se = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) se += (double(a.at(i)) - b.at(i)) * (double(a.at(i)) - b.at(i));
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  check_image(a, "ssim");
  constexpr int r = 3, k = 7;
  static const std::vector<double> w = gaussian_kernel(r, 1.5);
  const int H = static_cast<int>(a.dim(0)), W = static_cast<int>(a.dim(1));
  if (H < k || W < k) throw ShapeError("ssim: image smaller than the 7x7 window");
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  double total = 0.0;
  for (int y = r; y < H - r; ++y)
    for (int x = r; x < W - r; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
          const double g = w[(i + r) * k + (j + r)];
          const double va = a.at((y + i) * W + x + j), vb = b.at((y + i) * W + x + j);
          ma += g * va;
          mb += g * vb;
          saa += g * va * va;
          sbb += g * vb * vb;
          sab += g * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return total / (static_cast<double>(H - 2 * r) * (W - 2 * r));
}

double condition_consistency(const Tensor& generated, const Tensor& cond, ConditionKind kind) {
  const Tensor c = make_condition(generated, kind);
  return kind == ConditionKind::edge ? ssim(c, cond) : psnr(c, cond);
}

SamplePair make_sample(std::uint64_t seed, ConditionKind kind) {
  const SceneSpec spec = sample_scene(seed);
  const Tensor img = render_scene(spec);
  SamplePair p;
  p.seed = seed;
  p.label = spec.label();
  p.cond = make_condition(img, kind);
  p.x0 = Tensor(img.shape());
  for (std::int64_t i = 0; i < img.numel(); ++i) p.x0.data()[i] = 2.0f * img.at(i) - 1.0f;
  return p;
}

TrainBatch make_batch(std::span<const std::uint64_t> seeds, ConditionKind kind) {
  const auto B = static_cast<std::int64_t>(seeds.size());
  if (B == 0) throw Error("make_batch: no seeds");
  constexpr std::int64_t n = kImageSize * kImageSize;
  TrainBatch batch;
  batch.x0 = Tensor({B, kImageSize, kImageSize, 1});
  batch.cond_image = Tensor({B, kImageSize, kImageSize, 1});
  for (std::int64_t b = 0; b < B; ++b) {
    const SamplePair p = make_sample(seeds[b], kind);
    std::copy_n(p.x0.data(), n, batch.x0.data() + b * n);
    float* c = batch.cond_image.data() + b * n;
    for (std::int64_t i = 0; i < n; ++i) c[i] = 2.0f * p.cond.at(i) - 1.0f;
    batch.labels.push_back(p.label);
    batch.keys.push_back(seeds[b]);
  }
  return batch;
}

Tensor to_unit_range(const Tensor& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out.data()[i] = std::clamp(0.5f * (x.at(i) + 1.0f), 0.0f, 1.0f);
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  check_image(image, "write_pgm");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    const auto v = static_cast<unsigned char>(std::lround(std::clamp(image.at(i), 0.0f, 1.0f) * 255.0f));
    out.put(static_cast<char>(v));
  }
  if (!out) throw Error("failed writing " + path.string());
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw Error(path.string() + ": not an 8-bit P5 PGM");
  in.get();
  Tensor img({h, w, 1});
  for (std::int64_t i = 0; i < img.numel(); ++i) {
    const int c = in.get();
    if (c == EOF) throw Error(path.string() + ": truncated PGM");
    img.data()[i] = static_cast<float>(c) / 255.0f;
  }
  return img;
}

std::filesystem::path write_corpus(const std::filesystem::path& dir, std::span<const std::uint64_t> seeds,
                                   ConditionKind kind) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest);
  if (!out) throw Error("cannot write " + manifest.string());
  for (std::uint64_t seed : seeds) {
    const SamplePair p = make_sample(seed, kind);
    const std::string stem = std::to_string(seed);
    const std::string image = "x0_" + stem + ".pgm", cond = std::string(condition_name(kind)) + "_" + stem + ".pgm";
    write_pgm(dir / image, to_unit_range(p.x0));
    write_pgm(dir / cond, p.cond);
    nlohmann::json line{{"seed", seed},           {"label", p.label},   {"condition", condition_name(kind)},
                        {"image", image},         {"condition_image", cond}};
    out << line.dump() << '\n';
  }
  return manifest;
}

}  // namespace unicon
