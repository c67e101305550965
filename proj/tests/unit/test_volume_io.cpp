#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "brainseg/phantom.hpp"
#include "brainseg/preprocess.hpp"
#include "brainseg/volume_io.hpp"
#include "oracles/metrics_oracle.hpp"

using namespace brainseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "brainseg_test_volume_io";
  fs::create_directories(dir);
  return dir / name;
}

Volume blank_volume(std::size_t S, std::size_t H, std::size_t W) {
  Volume v;
  v.subject_id = "v";
  v.modalities = Array<float>({kModalities, S, H, W}, 0.0f);
  v.labels = Array<std::uint8_t>({S, H, W}, 0);
  return v;
}

Volume random_sparse_volume(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const auto S = std::size_t(uniform_int(rng, 1, 4)), H = std::size_t(uniform_int(rng, 3, 20)),
             W = std::size_t(uniform_int(rng, 3, 20));
  Volume v = blank_volume(S, H, W);
  const long n = uniform_int(rng, 1, 12);
  for (long k = 0; k < n; ++k) {
    const auto m = std::size_t(uniform_int(rng, 0, 3)), s = std::size_t(uniform_int(rng, 0, long(S) - 1));
    const auto r = std::size_t(uniform_int(rng, 0, long(H) - 1)), c = std::size_t(uniform_int(rng, 0, long(W) - 1));
    v.modalities(m, s, r, c) = float(uniform(rng, 0.1, 5.0));
  }
  return v;
}

}  // namespace

TEST(Phantom, SameSeedGivesIdenticalVolumes) {
  PhantomSpec spec;
  spec.seed = 7;
  spec.n_subjects = 3;
  const auto a = synth_dataset(spec, true), b = synth_dataset(spec, true);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].modalities, b[i].modalities);
    EXPECT_EQ(a[i].labels, b[i].labels);
  }
}

TEST(Phantom, NormalSubjectsHaveNoLabels) {
  PhantomSpec spec;
  spec.n_subjects = 4;
  for (const auto& v : synth_dataset(spec, false))
    for (auto l : v.labels) EXPECT_EQ(l, 0);
}

TEST(Phantom, LabelsAreConcentric) {
  PhantomSpec spec;
  spec.n_subjects = 5;
  for (const auto& v : synth_dataset(spec, true)) {
    v.validate();
    // Every enhancing pixel is surrounded (4-neighbours) by tumor, never by background.
    for (std::size_t r = 1; r + 1 < v.height(); ++r)
      for (std::size_t c = 1; c + 1 < v.width(); ++c)
        if (v.labels(0, r, c) == 4)
          for (auto [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}})
            EXPECT_NE(v.labels(0, r + dr, c + dc), 0);
  }
}

TEST(Phantom, SingleFixedRadiusLesion) {
  PhantomSpec spec;
  spec.n_subjects = 20;
  spec.tumor_count_min = spec.tumor_count_max = 1;
  spec.tumor_radius_min = spec.tumor_radius_max = 5.0;
  spec.image_size = 64;
  // Lattice points inside a radius-5 disk, over sub-pixel centre offsets.
  long lo = 1 << 30, hi = 0;
  for (int a = 0; a < 40; ++a)
    for (int b = 0; b < 40; ++b) {
      long n = 0;
      for (int y = -6; y <= 6; ++y)
        for (int x = -6; x <= 6; ++x) {
          const double dy = y - a / 40.0, dx = x - b / 40.0;
          if (dy * dy + dx * dx <= 25.0) ++n;
        }
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
  const double r_in = 5.0 - std::numbers::sqrt2 / 2, r_out = 5.0 + std::numbers::sqrt2 / 2;
  for (const auto& v : synth_dataset(spec, true)) {
    oracle::Grid g{1, int(v.height()), int(v.width()), {}};
    long area = 0;
    for (auto l : v.labels) {
      g.v.push_back(l ? 1 : 0);
      area += l ? 1 : 0;
    }
    EXPECT_EQ(oracle::components(g).size(), 1u);
    EXPECT_GE(area, lo - 1);
    EXPECT_LE(area, hi + 1);
    EXPECT_GE(double(area), std::numbers::pi * r_in * r_in);
    EXPECT_LE(double(area), std::numbers::pi * r_out * r_out);
  }
}

TEST(Phantom, InvalidSpecRejected) {
  PhantomSpec spec;
  spec.tumor_radius_max = 40.0;
  EXPECT_THROW(synth_dataset(spec, true), ValidationError);
  spec = PhantomSpec{};
  spec.tumor_count_min = 3;
  spec.tumor_count_max = 2;
  EXPECT_THROW(synth_dataset(spec, true), ValidationError);
}

TEST(Phantom, BackgroundIsExactlyZero) {
  PhantomSpec spec;
  spec.n_subjects = 1;
  const Volume v = synth_subject(spec, true, 0);
  EXPECT_EQ(v.modalities(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(v.modalities(3, 0, 63, 63), 0.0f);
}

TEST(Bbox, SinglePixel) {
  Volume v = blank_volume(1, 30, 40);
  v.modalities(2, 0, 10, 20) = 1.0f;
  EXPECT_EQ(compute_bbox(v), (BBox{10, 10, 20, 20}));
}

TEST(Bbox, FullImage) {
  Volume v = blank_volume(2, 7, 9);
  v.modalities.fill(3.0f);
  EXPECT_EQ(compute_bbox(v), (BBox{0, 6, 0, 8}));
}

TEST(Bbox, AllZeroIsEmptyBrain) {
  EXPECT_THROW(compute_bbox(blank_volume(2, 5, 5)), EmptyBrainError);
}

TEST(Bbox, MatchesExhaustiveScanOn100Seeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Volume v = random_sparse_volume(seed);
    std::size_t r0 = 1 << 20, r1 = 0, c0 = 1 << 20, c1 = 0;
    for (std::size_t m = 0; m < 4; ++m)
      for (std::size_t s = 0; s < v.slices(); ++s)
        for (std::size_t r = 0; r < v.height(); ++r)
          for (std::size_t c = 0; c < v.width(); ++c)
            if (v.modalities(m, s, r, c) > 0) {
              r0 = std::min(r0, r);
              r1 = std::max(r1, r);
              c0 = std::min(c0, c);
              c1 = std::max(c1, c);
            }
    EXPECT_EQ(compute_bbox(v), (BBox{r0, r1, c0, c1})) << "seed " << seed;
  }
}

TEST(SliceFilter, AllZeroLabelsKeepNothing) {
  EXPECT_TRUE(filter_blank_slices(blank_volume(4, 5, 5)).kept_slices.empty());
}

TEST(SliceFilter, SingleLabeledSlice) {
  Volume v = blank_volume(100, 4, 4);
  v.modalities.fill(1.0f);
  v.labels(77, 2, 1) = 2;
  EXPECT_EQ(filter_blank_slices(v).kept_slices, (std::vector<std::size_t>{77}));
}

TEST(SliceFilter, MatchesPerSliceCountAndPartitions) {
  Rng rng = make_rng(3);
  Volume v = blank_volume(30, 6, 6);
  v.modalities.fill(1.0f);
  for (std::size_t s = 0; s < 30; ++s)
    if (uniform(rng, 0, 1) < 0.4) v.labels(s, std::size_t(uniform_int(rng, 0, 5)), 3) = 4;
  const auto plan = filter_blank_slices(v);
  std::vector<std::size_t> expected;
  for (std::size_t s = 0; s < 30; ++s) {
    long count = 0;
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 6; ++c) count += v.labels(s, r, c) != 0;
    if (count > 0) expected.push_back(s);
  }
  EXPECT_EQ(plan.kept_slices, expected);
}

TEST(TrainingSlices, CropMatchesIndexShift) {
  PhantomSpec spec;
  spec.n_slices = 6;
  spec.n_subjects = 1;
  const Volume v = synth_subject(spec, true, 0);
  const auto plan = filter_blank_slices(v);
  ASSERT_FALSE(plan.kept_slices.empty());
  const auto items = to_training_slices(v, plan);
  ASSERT_EQ(items.size(), plan.kept_slices.size());
  const BBox& bb = *plan.bbox;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& it = items[k];
    ASSERT_EQ(it.image.shape(), (Shape{4, bb.rows(), bb.cols()}));
    double in_sum = 0, crop_sum = 0;
    for (std::size_t m = 0; m < 4; ++m)
      for (std::size_t r = 0; r < bb.rows(); ++r)
        for (std::size_t c = 0; c < bb.cols(); ++c) {
          EXPECT_EQ(it.image(m, r, c), v.modalities(m, plan.kept_slices[k], bb.row_min + r, bb.col_min + c));
          crop_sum += it.image(m, r, c);
          in_sum += v.modalities(m, plan.kept_slices[k], bb.row_min + r, bb.col_min + c);
        }
    EXPECT_EQ(in_sum, crop_sum);
  }
}

TEST(TrainingSlices, PlanFromOtherSubjectRejected) {
  PhantomSpec spec;
  spec.n_subjects = 2;
  const auto vs = synth_dataset(spec, true);
  EXPECT_THROW(to_training_slices(vs[0], filter_blank_slices(vs[1])), ConsistencyError);
}

TEST(VolumeFile, RawContainerRoundTripIsBitExact) {
  PhantomSpec spec;
  spec.n_slices = 3;
  const Volume v = synth_subject(spec, true, 4);
  const auto path = scratch("roundtrip.bsv");
  save_volume(v, path);
  const Volume w = load_volume(path);
  EXPECT_EQ(v.modalities, w.modalities);
  EXPECT_EQ(v.labels, w.labels);
  EXPECT_EQ(v.spacing, w.spacing);
  EXPECT_EQ(v.subject_id, w.subject_id);
}

TEST(VolumeFile, CorruptHeaderIsIngestionError) {
  const auto path = scratch("corrupt.bsv");
  {
    std::ofstream os(path, std::ios::binary);
    os << "BRAINSEG-RAW 1\n{not json\n";
  }
  EXPECT_THROW(load_volume(path), IngestionError);
}

TEST(Nifti, FourChannelRoundTrip) {
  PhantomSpec spec;
  spec.n_slices = 2;
  const Volume v = synth_subject(spec, true, 1);
  const auto path = scratch("four.nii.gz");
  save_nifti(v, path);
  const Volume w = load_nifti(path);
  EXPECT_EQ(v.modalities, w.modalities);
}

TEST(Nifti, SingleModalityReplicated) {
  PhantomSpec spec;
  spec.n_slices = 2;
  const Volume v = synth_subject(spec, false, 0);
  nifti::Image img;
  img.dims = {v.width(), v.height(), v.slices(), 1};
  img.ndim = 3;
  for (std::size_t s = 0; s < v.slices(); ++s)
    for (std::size_t r = 0; r < v.height(); ++r)
      for (std::size_t c = 0; c < v.width(); ++c) img.data.push_back(v.modalities(0, s, r, c));
  const auto path = scratch("t1.nii");
  nifti::write(path, img, nifti::dt_float32);
  const Volume w = load_nifti(path, ReplicationPolicy::replicate);
  for (std::size_t m = 0; m < 4; ++m)
    for (std::size_t s = 0; s < v.slices(); ++s)
      for (std::size_t r = 0; r < v.height(); ++r)
        for (std::size_t c = 0; c < v.width(); ++c) EXPECT_EQ(w.modalities(m, s, r, c), v.modalities(0, s, r, c));
  EXPECT_THROW(load_nifti(path, ReplicationPolicy::reject), IngestionError);
}

TEST(Nifti, WrongChannelCountRejected) {
  nifti::Image img;
  img.dims = {4, 4, 2, 3};
  img.ndim = 4;
  img.data.assign(4 * 4 * 2 * 3, 1.0);
  const auto path = scratch("three.nii");
  nifti::write(path, img, nifti::dt_float32);
  EXPECT_THROW(load_nifti(path), IngestionError);
}

TEST(Nifti, TruncatedFileRejected) {
  const auto path = scratch("short.nii");
  {
    std::ofstream os(path, std::ios::binary);
    os << "tiny";
  }
  EXPECT_THROW(load_nifti(path), IngestionError);
}
