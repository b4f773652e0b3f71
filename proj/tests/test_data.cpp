#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "unicon/data.hpp"

using namespace unicon;

namespace {

Tensor constant_image(float v, int size = 32) { return Tensor::full({size, size, 1}, v); }

Tensor random_image(std::uint64_t seed, int size = 32) {
  CounterRng rng(seed);
  return rng.uniform_tensor({size, size, 1}, 0.0f, 1.0f);
}

// SSIM from the textbook definition: Gaussian-weighted means first, then
// weighted central moments in a second pass.
double literal_ssim(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  double g[7][7], norm = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) norm += g[i][j] = std::exp(-((i - 3.0) * (i - 3.0) + (j - 3.0) * (j - 3.0)) / 4.5);
  const double c1 = 0.0001, c2 = 0.0009;
  double sum = 0.0;
  int windows = 0;
  for (int y = 0; y + 7 <= h; ++y)
    for (int x = 0; x + 7 <= w; ++x) {
      double mx = 0, my = 0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          mx += g[i][j] / norm * a[(y + i) * w + x + j];
          my += g[i][j] / norm * b[(y + i) * w + x + j];
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          const double dx = a[(y + i) * w + x + j] - mx, dy = b[(y + i) * w + x + j] - my;
          vx += g[i][j] / norm * dx * dx;
          vy += g[i][j] / norm * dy * dy;
          cxy += g[i][j] / norm * dx * dy;
        }
      sum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  return sum / windows;
}

}  // namespace

TEST(Scene, EmptySceneIsBackground) {
  SceneSpec s;
  s.background = 0.1f;
  const Tensor img = render_scene(s);
  for (float v : img.values()) EXPECT_EQ(v, 0.1f);
}

TEST(Scene, DeterministicPerSeed) {
  for (std::uint64_t seed : {0ull, 7ull, 50000ull}) {
    EXPECT_TRUE(bit_equal(render_scene(sample_scene(seed)), render_scene(sample_scene(seed))));
    EXPECT_EQ(sample_scene(seed).label(), sample_scene(seed).label());
  }
  EXPECT_FALSE(bit_equal(render_scene(sample_scene(1)), render_scene(sample_scene(2))));
}

TEST(Scene, CircleAreaMatchesAnalyticArea) {
  SceneSpec s;
  s.shapes.push_back({ShapeKind::circle, 16.0f, 16.0f, 8.0f, 1.0f, 0.0f, 1.0f});
  const Tensor img = render_scene(s);
  int above = 0;
  for (float v : img.values()) above += v > 0.5f;
  const double area = std::numbers::pi * 64.0;
  EXPECT_NEAR(above, area, 0.1 * area);
}

TEST(Scene, ValuesAndLabelsInRange) {
  int seen[kNumClasses] = {};
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const SceneSpec s = sample_scene(seed);
    ASSERT_GE(s.shapes.size(), 1u);
    ASSERT_LE(s.shapes.size(), 4u);
    EXPECT_GE(s.background, 0.0f);
    EXPECT_LE(s.background, 0.15f);
    for (const SceneShape& shape : s.shapes) {
      EXPECT_GE(shape.intensity, 0.2f);
      EXPECT_LE(shape.intensity, 1.0f);
    }
    const int label = s.label();
    ASSERT_GE(label, 0);
    ASSERT_LT(label, kNumClasses);
    ++seen[label];
    for (float v : render_scene(s).values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
  for (int c = 0; c < kNumClasses; ++c) EXPECT_GT(seen[c], 0) << "class " << c;
}

TEST(Scene, LabelFromShapeMultiset) {
  SceneSpec s;
  SceneShape rect{ShapeKind::rectangle};
  SceneShape circle{ShapeKind::circle};
  s.shapes = {rect};
  EXPECT_EQ(s.label(), 0);
  s.shapes = {rect, circle, rect};
  EXPECT_EQ(s.label(), 5);
  s.shapes = {rect, rect, circle};
  EXPECT_EQ(s.label(), 5);
}

TEST(Condition, ConstantImage) {
  const Tensor c = constant_image(0.4f);
  EXPECT_TRUE(bit_equal(make_condition(c, ConditionKind::sr4x), c));
  const Tensor blurred = make_condition(c, ConditionKind::blur_sr4x);
  for (float v : blurred.values()) EXPECT_NEAR(v, 0.4f, 1e-6f);
  for (float v : make_condition(c, ConditionKind::edge).values()) EXPECT_EQ(v, 0.0f);
}

TEST(Condition, Sr4xIdempotentOnTiles) {
  const Tensor img = sr4x(random_image(3));
  EXPECT_TRUE(bit_equal(sr4x(img), img));
  const Tensor raw = random_image(4);
  const Tensor down = sr4x(raw);
  double tile = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) tile += raw.at(i * 32 + j);
  EXPECT_NEAR(down.at(0), tile / 16.0, 1e-6);
  EXPECT_EQ(down.at(3 * 32 + 3), down.at(0));
}

TEST(Condition, SobelOfVerticalStep) {
  Tensor step = constant_image(0.0f);
  for (int y = 0; y < 32; ++y)
    for (int x = 16; x < 32; ++x) step.data()[y * 32 + x] = 1.0f;
  const Tensor m = sobel_magnitude(step);
  // Column kernel weights 1, 2, 1 times the 0 -> 1 difference across the step.
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) EXPECT_EQ(m.at(y * 32 + x), (x == 15 || x == 16) ? 4.0f : 0.0f) << y << "," << x;
  const Tensor e = edge_map(step);
  for (int x = 0; x < 32; ++x) EXPECT_EQ(e.at(5 * 32 + x), (x == 15 || x == 16) ? 1.0f : 0.0f);
}

TEST(Condition, BlurKernelOnImpulse) {
  Tensor impulse = constant_image(0.0f);
  impulse.data()[16 * 32 + 16] = 1.0f;
  const Tensor b = gaussian_blur(impulse);
  double sum = 0.0, norm = 0.0;
  for (float v : b.values()) sum += v;
  for (int i = -4; i <= 4; ++i)
    for (int j = -4; j <= 4; ++j) norm += std::exp(-(i * i + j * j) / 8.0);
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_NEAR(b.at(16 * 32 + 16), 1.0 / norm, 1e-7);
  EXPECT_NEAR(b.at(18 * 32 + 15), std::exp(-5.0 / 8.0) / norm, 1e-7);
  EXPECT_EQ(b.at(16 * 32 + 21), 0.0f);
}

TEST(Condition, OutputsInUnitRangeAndEdgesBinary) {
  double edge_pixels = 0.0;
  const int n = 200;
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    const Tensor img = render_scene(sample_scene(seed));
    for (auto kind : {ConditionKind::sr4x, ConditionKind::blur_sr4x}) {
      for (float v : make_condition(img, kind).values()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
    }
    for (float v : make_condition(img, ConditionKind::edge).values()) {
      ASSERT_TRUE(v == 0.0f || v == 1.0f);
      edge_pixels += v;
    }
  }
  const double fraction = edge_pixels / (n * 32.0 * 32.0);
  EXPECT_GE(fraction, 0.05);
  EXPECT_LE(fraction, 0.20);
}

TEST(Condition, Names) {
  EXPECT_EQ(parse_condition("blur-sr4x"), ConditionKind::blur_sr4x);
  EXPECT_EQ(condition_name(ConditionKind::edge), "edge");
  EXPECT_THROW(parse_condition("canny"), Error);
}

TEST(Metrics, Psnr) {
  const Tensor a = random_image(1);
  EXPECT_EQ(psnr(a, a), 99.0);
  EXPECT_NEAR(psnr(constant_image(0.0f), constant_image(0.5f)), 6.0206, 1e-4);
  EXPECT_NEAR(psnr(constant_image(0.0f), constant_image(1.0f)), 0.0, 1e-12);
  EXPECT_NEAR(psnr(constant_image(0.0f), constant_image(2.0f), 2.0), 0.0, 1e-12);
  EXPECT_THROW(psnr(a, constant_image(0.0f, 16)), ShapeError);
}

TEST(Metrics, SsimMatchesLiteralFormula) {
  const float pa[64] = {0.1f, 0.9f, 0.3f, 0.4f, 0.5f, 0.2f, 0.8f, 0.6f, 0.7f, 0.0f, 0.2f, 0.9f, 0.3f, 0.5f, 0.1f, 0.4f,
                        0.6f, 0.3f, 0.8f, 0.1f, 0.7f, 0.2f, 0.5f, 0.9f, 0.4f, 0.6f, 0.0f, 0.3f, 0.8f, 0.7f, 0.2f, 0.1f,
                        0.9f, 0.2f, 0.5f, 0.6f, 0.1f, 0.4f, 0.3f, 0.8f, 0.3f, 0.7f, 0.1f, 0.2f, 0.9f, 0.6f, 0.4f, 0.5f,
                        0.5f, 0.4f, 0.6f, 0.7f, 0.3f, 0.8f, 0.9f, 0.0f, 0.2f, 0.1f, 0.7f, 0.5f, 0.4f, 0.3f, 0.6f, 0.8f};
  std::vector<double> a(64), b(64);
  Tensor ta({8, 8, 1}), tb({8, 8, 1});
  for (int i = 0; i < 64; ++i) {
    a[i] = pa[i];
    b[i] = 0.7 * pa[i] + 0.3 * pa[(i * 5 + 3) % 64];
    ta.data()[i] = static_cast<float>(a[i]);
    tb.data()[i] = static_cast<float>(b[i]);
    b[i] = tb.at(i);
  }
  EXPECT_NEAR(ssim(ta, tb), literal_ssim(a, b, 8, 8), 1e-6);
}

TEST(Metrics, SsimProperties) {
  const Tensor a = random_image(2);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  Tensor bin = constant_image(0.0f), inv = constant_image(1.0f);
  CounterRng rng(4);
  for (int i = 0; i < 32 * 32; ++i) {
    const float v = rng.below(2) ? 1.0f : 0.0f;
    bin.data()[i] = v;
    inv.data()[i] = 1.0f - v;
  }
  EXPECT_LT(ssim(bin, inv), 0.0);
  EXPECT_THROW(ssim(a, constant_image(0.0f, 16)), ShapeError);
}

TEST(Metrics, ConditionConsistency) {
  const Tensor img = render_scene(sample_scene(11));
  for (auto kind : {ConditionKind::sr4x, ConditionKind::blur_sr4x}) {
    EXPECT_EQ(condition_consistency(img, make_condition(img, kind), kind), 99.0);
  }
  EXPECT_NEAR(condition_consistency(img, make_condition(img, ConditionKind::edge), ConditionKind::edge), 1.0, 1e-12);
  const Tensor cond = make_condition(img, ConditionKind::sr4x);
  const Tensor zero = constant_image(0.0f);
  EXPECT_EQ(condition_consistency(zero, cond, ConditionKind::sr4x), psnr(sr4x(zero), cond));
}

TEST(Dataset, SampleAndBatch) {
  const SamplePair p = make_sample(5, ConditionKind::edge);
  const Tensor img = render_scene(sample_scene(5));
  for (std::int64_t i = 0; i < img.numel(); ++i) EXPECT_EQ(p.x0.at(i), 2.0f * img.at(i) - 1.0f);
  EXPECT_TRUE(bit_equal(p.cond, make_condition(img, ConditionKind::edge)));
  EXPECT_EQ(p.label, sample_scene(5).label());

  const std::uint64_t seeds[] = {5, 9};
  const TrainBatch b = make_batch(seeds, ConditionKind::edge);
  EXPECT_EQ(b.x0.shape(), (Shape{2, 32, 32, 1}));
  EXPECT_EQ(b.cond_image.shape(), (Shape{2, 32, 32, 1}));
  EXPECT_EQ(b.keys, (std::vector<std::uint64_t>{5, 9}));
  EXPECT_EQ(b.x0.at(0), p.x0.at(0));
  for (std::int64_t i = 0; i < 32 * 32; ++i) EXPECT_EQ(b.cond_image.at(i), 2.0f * p.cond.at(i) - 1.0f);
  EXPECT_EQ(b.labels[1], sample_scene(9).label());
  EXPECT_TRUE(kTrainSeedEnd <= kTestSeedBegin);
}

TEST(Dataset, PgmRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "unicon_pgm_test";
  std::filesystem::create_directories(dir);
  const Tensor img = render_scene(sample_scene(3));
  write_pgm(dir / "a.pgm", img);
  const Tensor back = read_pgm(dir / "a.pgm");
  EXPECT_EQ(back.shape(), img.shape());
  for (std::int64_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(back.at(i), img.at(i), 0.5 / 255.0 + 1e-6);
  std::ofstream(dir / "bad.pgm") << "P2\n2 2\n255\n0 0 0 0\n";
  EXPECT_THROW(read_pgm(dir / "bad.pgm"), Error);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, CorpusManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "unicon_corpus_test";
  std::filesystem::remove_all(dir);
  const std::uint64_t seeds[] = {50000, 50001, 50002};
  const auto manifest = write_corpus(dir, seeds, ConditionKind::sr4x);
  std::ifstream in(manifest);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["seed"], seeds[rows]);
    EXPECT_EQ(j["condition"], "sr4x");
    EXPECT_EQ(j["label"], sample_scene(seeds[rows]).label());
    EXPECT_TRUE(std::filesystem::exists(dir / j["image"].get<std::string>()));
    EXPECT_TRUE(std::filesystem::exists(dir / j["condition_image"].get<std::string>()));
    ++rows;
  }
  EXPECT_EQ(rows, 3);
  // A second generation is byte-identical.
  const auto first = read_pgm(dir / "x0_50001.pgm");
  write_corpus(dir, seeds, ConditionKind::sr4x);
  EXPECT_TRUE(bit_equal(read_pgm(dir / "x0_50001.pgm"), first));
  std::filesystem::remove_all(dir);
}
