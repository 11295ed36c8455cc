#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tcgl/sampler.hpp"

using namespace tcgl;

namespace {

/// Video whose every pixel of frame t equals t.
VideoTensor counting_video(std::size_t frames) {
  VideoTensor v = VideoTensor::zeros(frames, 1, 2, 2);
  for (std::size_t t = 0; t < frames; ++t)
    for (auto& px : v.frame(t)) px = static_cast<float>(t);
  return v;
}

float first_pixel(const VideoTensor& v) { return v.data.front(); }

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double frame_mean(const VideoTensor& v, std::size_t t) {
  const auto f = v.frame(t);
  return std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
}

}  // namespace

TEST(SampleSnippets, DefaultLayoutStarts) {
  EXPECT_EQ(snippet_starts(64, 16, 8, 3), (std::vector<std::size_t>{0, 24, 48}));
  const auto snippets = sample_snippets(counting_video(64), 16, 8, 3);
  ASSERT_EQ(snippets.size(), 3u);
  EXPECT_EQ(first_pixel(snippets[1]), 24.0f);
  EXPECT_EQ(snippets[2].frames, 16u);
}

TEST(SampleSnippets, TooShortNamesMinimum) {
  try {
    sample_snippets(counting_video(63), 16, 8, 3);
    FAIL() << "63-frame video accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("64"), std::string::npos) << e.what();
  }
}

TEST(SampleSnippets, ContiguousWithoutInterval) {
  EXPECT_EQ(snippet_starts(32, 16, 0, 2), (std::vector<std::size_t>{0, 16}));
}

TEST(SampleSnippets, CoverSourceFramesExactly) {
  const VideoTensor v = counting_video(70);
  for (std::size_t offset : {0u, 3u, 6u}) {
    const auto snippets = sample_snippets(v, 16, 8, 3, offset);
    const auto starts = snippet_starts(v.frames, 16, 8, 3, offset);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(snippets[k], v.clip(starts[k], 16));
  }
  EXPECT_THROW(sample_snippets(v, 16, 8, 3, 7), std::invalid_argument);
}

TEST(SampleSnippets, RandomOffsetKeepsTupleInside) {
  Rng rng(4);
  const SnippetLayout layout;
  for (int i = 0; i < 200; ++i) {
    const std::size_t off = random_offset(rng, 80, layout);
    EXPECT_LE(off + layout.required_frames(), 80u);
  }
  EXPECT_EQ(random_offset(rng, 64, layout), 0u);
}

TEST(Permutation, LexicographicIndexing) {
  EXPECT_EQ(permutation_from_index(0, 3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(permutation_from_index(1, 3), (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_EQ(permutation_from_index(5, 3), (std::vector<std::size_t>{2, 1, 0}));
  for (std::size_t n = 1; n <= 5; ++n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::size_t id = 0;
    do {
      EXPECT_EQ(permutation_from_index(id, n), p);
      EXPECT_EQ(permutation_index(p), id);
      ++id;
    } while (std::next_permutation(p.begin(), p.end()));
    EXPECT_EQ(id, factorial(n));
  }
}

TEST(ShuffleTuple, IdentityPermutation) {
  Rng rng(1);
  const auto t = shuffle_tuple(sample_snippets(counting_video(64), 16, 8, 3), 0, rng);
  EXPECT_EQ(t.order, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(first_pixel(t.snippets[0]), 0.0f);
  EXPECT_EQ(first_pixel(t.snippets[2]), 48.0f);
}

TEST(ShuffleTuple, SixLabelsForThreeSnippets) {
  Rng rng(2);
  std::set<std::vector<float>> orders;
  for (std::size_t id = 0; id < 6; ++id) {
    const auto t = shuffle_tuple(sample_snippets(counting_video(64), 16, 8, 3), id, rng);
    std::vector<float> firsts;
    for (const auto& s : t.snippets) firsts.push_back(first_pixel(s));
    orders.insert(firsts);
  }
  EXPECT_EQ(orders.size(), 6u);
  EXPECT_THROW(shuffle_tuple(sample_snippets(counting_video(64), 16, 8, 3), 6, rng), std::invalid_argument);
}

TEST(ShuffleTuple, UnshuffleRestoresChronology) {
  Rng rng(3);
  const auto chrono = sample_snippets(counting_video(100), 10, 5, 5);
  for (int i = 0; i < 50; ++i) {
    const auto t = shuffle_tuple(chrono, std::nullopt, rng);
    EXPECT_EQ(unshuffle(t), chrono);
    EXPECT_EQ(permutation_from_index(t.permutation_id, 5), t.order);
  }
}

TEST(ShuffleTuple, UniformOverPermutations) {
  Rng rng(17);
  const auto chrono = sample_snippets(counting_video(64), 16, 8, 3);
  std::map<std::size_t, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[shuffle_tuple(chrono, std::nullopt, rng).permutation_id];
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [id, c] : counts) EXPECT_NEAR(c / static_cast<double>(draws), 1.0 / 6.0, 0.02) << "permutation " << id;
}

TEST(SplitFramesets, FourSetsOfFour) {
  const VideoTensor s = counting_video(16);
  const auto sets = split_framesets(s, 4);
  ASSERT_EQ(sets.size(), 4u);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(sets[j].frames, 4u);
    EXPECT_EQ(first_pixel(sets[j]), static_cast<float>(4 * j));
  }
}

TEST(SplitFramesets, SingleFrames) {
  const auto sets = split_framesets(counting_video(16), 16);
  ASSERT_EQ(sets.size(), 16u);
  for (const auto& s : sets) EXPECT_EQ(s.frames, 1u);
}

TEST(SplitFramesets, RejectsNonDivisor) {
  EXPECT_THROW(split_framesets(counting_video(16), 3), std::invalid_argument);
  EXPECT_THROW(split_framesets(counting_video(16), 0), std::invalid_argument);
}

TEST(SplitFramesets, IsOrderedPartition) {
  const VideoTensor s = counting_video(24);
  for (std::size_t m : {1u, 2u, 3u, 4u, 6u, 8u, 12u, 24u}) {
    std::vector<float> joined;
    for (const auto& fs : split_framesets(s, m)) joined.insert(joined.end(), fs.data.begin(), fs.data.end());
    EXPECT_EQ(joined, s.data) << "m=" << m;
  }
}

TEST(MakeTuple, AttachesFramesetsInTupleOrder) {
  Rng rng(5);
  const SnippetTuple t = tcgl::make_tuple(counting_video(64), SnippetLayout{}, 4, rng);
  ASSERT_EQ(t.frame_sets.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(t.frame_sets[j].size(), 4u);
    EXPECT_EQ(first_pixel(t.frame_sets[j][0]), first_pixel(t.snippets[j]));
  }
}

TEST(Generator, Deterministic) {
  const auto a = gen_synthetic_video(42, synthetic_label(3), 64, 2, 8, 8);
  const auto b = gen_synthetic_video(42, synthetic_label(3), 64, 2, 8, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, gen_synthetic_video(43, synthetic_label(3), 64, 2, 8, 8));
}

TEST(Generator, ConsecutiveFramesDiffer) {
  const auto v = gen_synthetic_video(1, synthetic_label(0), 64, 1, 16, 16);
  for (std::size_t t = 0; t + 1 < v.frames; ++t) {
    double mad = 0;
    const auto a = v.frame(t), b = v.frame(t + 1);
    for (std::size_t i = 0; i < a.size(); ++i) mad += std::abs(a[i] - b[i]);
    EXPECT_GT(mad / static_cast<double>(a.size()), 0.0) << "frame " << t;
  }
}

TEST(Generator, BrightnessTracksFrameIndex) {
  double worst = 1.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto v = gen_synthetic_video(derive_seed(99, i), synthetic_label(static_cast<int>(i % 10)), 64, 1, 16, 16);
    std::vector<double> t, level;
    for (std::size_t f = 0; f < v.frames; ++f) {
      t.push_back(static_cast<double>(f));
      level.push_back(frame_mean(v, f));
    }
    worst = std::min(worst, pearson(t, level));
  }
  EXPECT_GT(worst, 0.9);
}

TEST(Generator, ClassesHaveSeparableRise) {
  // Brightness gained between the first and last frame, per class.
  std::map<int, std::pair<double, double>> range;
  for (int cls = 0; cls < 10; ++cls) {
    double lo = 1e9, hi = -1e9;
    for (std::uint64_t i = 0; i < 20; ++i) {
      const auto v = gen_synthetic_video(derive_seed(5, i), synthetic_label(cls), 64, 1, 16, 16);
      const double rise = frame_mean(v, 63) - frame_mean(v, 0);
      lo = std::min(lo, rise);
      hi = std::max(hi, rise);
    }
    range[cls] = {lo, hi};
  }
  for (int a = 0; a < 10; ++a)
    for (int b = a + 1; b < 10; ++b) {
      const bool disjoint = range[a].second < range[b].first || range[b].second < range[a].first;
      EXPECT_TRUE(disjoint) << "classes " << a << " and " << b;
    }
}

TEST(Generator, RejectsBadArguments) {
  EXPECT_THROW(gen_synthetic_video(1, synthetic_label(0), 0, 1, 4, 4), std::invalid_argument);
  EXPECT_THROW(gen_synthetic_video(1, synthetic_label(0), 4, 1, 0, 4), std::invalid_argument);
  EXPECT_THROW(synthetic_label(-1), std::invalid_argument);
}

TEST(Dataset, BalancedLabels) {
  const Dataset d = generate_dataset(30, 10, 7, VideoDims{8, 1, 4, 4});
  std::map<int, int> counts;
  for (int l : d.labels) ++counts[l];
  EXPECT_EQ(counts.size(), 10u);
  for (const auto& [cls, c] : counts) EXPECT_EQ(c, 3) << cls;
}

TEST(Dataset, WriteReadRoundTrip) {
  tcgl::testing::TempDir dir;
  const Dataset d = generate_dataset(6, 3, 11, VideoDims{10, 2, 3, 5});
  write_dataset(d, dir.path());
  const Dataset back = read_dataset(dir.path());
  EXPECT_EQ(back.seed, d.seed);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.files, d.files);
  EXPECT_EQ(back.videos, d.videos);
}

TEST(Dataset, RejectsTruncatedVideo) {
  tcgl::testing::TempDir dir;
  const Dataset d = generate_dataset(2, 2, 1, VideoDims{4, 1, 2, 2});
  write_dataset(d, dir.path());
  std::filesystem::resize_file(dir / d.files[1], 20 + 4 * 3);
  EXPECT_THROW(read_dataset(dir.path()), std::runtime_error);
}

TEST(Dataset, RejectsLabelMismatch) {
  tcgl::testing::TempDir dir;
  const Dataset d = generate_dataset(2, 2, 1, VideoDims{4, 1, 2, 2});
  write_dataset(d, dir.path());
  std::ofstream(dir / kDatasetManifest) << "seed 1\n" << d.files[0] << " 1\n";
  EXPECT_THROW(read_dataset(dir.path()), std::runtime_error);
  EXPECT_THROW(read_dataset(dir / "missing"), std::invalid_argument);
}
