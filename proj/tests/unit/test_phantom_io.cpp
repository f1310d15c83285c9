// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "oracles.hpp"

#include "dsasrgs/adam.hpp"
#include "dsasrgs/checkpoint.hpp"
#include "dsasrgs/dataset.hpp"
#include "dsasrgs/errors.hpp"
#include "dsasrgs/image.hpp"
#include "dsasrgs/phantom.hpp"
#include "dsasrgs/supervision.hpp"

#include <doctest.h>

#include <Eigen/LU>

#include <random>

using namespace dsasrgs;

TEST_SUITE("phantom") {

TEST_CASE("bolus curve: onset, peak and integral") {
  const BolusParams p;
  CHECK(bolus_curve(0.1, 0.2, p) == 0.0);
  CHECK(bolus_curve(0.2, 0.2, p) == 0.0);
  for (double arrival : {0.0, 0.125, 0.3}) {
    const double peak = bolus_curve(arrival + p.shape * p.decay, arrival, p);
    CHECK(std::abs(peak - p.peak_scale) <= 1e-7 * p.peak_scale);
  }
  // Trapezoid over [0, 20] with 10^4 points.
  const int n = 10000;
  const double T = 20.0, h = T / (n - 1);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += (i == 0 || i == n - 1 ? 0.5 : 1.0) * bolus_curve(i * h, 0.0, p);
  CHECK(std::abs(s * h - bolus_integral(p)) <= 1e-3 * bolus_integral(p));
}

TEST_CASE("phantom containment, chain structure and determinism") {
  BoundingBox box;
  const auto one = generate_phantom(3, 1, 8, box);
  REQUIRE(one.size() == 8);
  for (std::size_t i = 1; i < one.size(); ++i) CHECK(one[i].arrival >= one[i - 1].arrival);

  const auto a = generate_phantom(5, 31, 8, box);
  for (const auto& b : a) CHECK(box.contains(b.mu));
  const auto b = generate_phantom(5, 31, 8, box);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mu == b[i].mu);
    CHECK(a[i].sigma == b[i].sigma);
    CHECK(a[i].arrival == b[i].arrival);
  }
}

TEST_CASE("line integral closed form matches quadrature") {
  const Eigen::Vector3d mu(1.0, -2.0, 3.0);
  const Eigen::Matrix3d sigma = 4.0 * Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d inv = sigma.inverse();
  const Eigen::Vector3d origin(0.7, -1.5, -500.0);
  const Eigen::Vector3d dir = (mu + Eigen::Vector3d(0.3, 0.1, 0.0) - origin).normalized();
  const double closed = gaussian_line_integral(origin, dir, mu, inv);

  const double center = (mu - origin).dot(dir);
  const double L = 40.0;
  const int n = 10000;
  const double h = 2 * L / (n - 1);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d p = origin + (center - L + i * h) * dir - mu;
    s += (i == 0 || i == n - 1 ? 0.5 : 1.0) * std::exp(-0.5 * p.dot(inv * p));
  }
  CHECK(std::abs(closed - s * h) <= 1e-6 * closed);
}

TEST_CASE("analytic projection: pre-arrival zero and linearity in the peak") {
  BoundingBox box;
  const auto blobs = generate_phantom(1, 5, 6, box);
  DetectorParams det;
  det.width = det.height = 64;
  det.pixel_pitch_mm = 2.4;
  const auto traj = make_circular_trajectory(3, 180, 750, det, TimeMode::sweep);
  BolusParams p;
  std::vector<PhantomBlob> late = blobs;
  for (auto& b : late) b.arrival = std::max(b.arrival, 0.1);
  for (float v : analytic_project(late, p, traj.views[1], 0.0, 64, 64).pixels) CHECK(v == 0.0f);

  const ProjectionImage one = analytic_project(blobs, p, traj.views[1], 0.6, 64, 64);
  p.peak_scale = 2.0;
  const ProjectionImage two = analytic_project(blobs, p, traj.views[1], 0.6, 64, 64);
  double total = 0.0;
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(two.pixels[i] == doctest::Approx(2.0 * one.pixels[i]).epsilon(1e-6));
    total += one.pixels[i];
  }
  CHECK(total > 0.0);
}

TEST_CASE("dataset layout, LR consistency and manifest round trip") {
  oracle::TempDir dir("dsasrgs_ds");
  BoundingBox box;
  const auto blobs = generate_phantom(2, 7, 6, box);
  DetectorParams det;
  det.width = det.height = 32;
  det.pixel_pitch_mm = 4.8;
  const auto traj = make_circular_trajectory(3, 180, 750, det, TimeMode::sweep);
  DatasetWriteOptions opt;
  opt.n_frames = 4;
  opt.hr_width = opt.hr_height = 32;
  const Manifest m = make_dataset(blobs, BolusParams{}, traj, nullptr, opt, dir.path());

  int hr_files = 0, lr_files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path() / "hr")) hr_files += e.is_regular_file();
  for (const auto& e : std::filesystem::directory_iterator(dir.path() / "lr")) lr_files += e.is_regular_file();
  CHECK(hr_files == 12);
  CHECK(lr_files == 12);
  CHECK(std::filesystem::exists(dir.path() / "geometry.json"));

  const Dataset ds = load_dataset(dir.path());
  CHECK(manifest_to_json(ds.manifest) == manifest_to_json(m));
  float hr_max = 0.0f;
  for (int v = 0; v < 3; ++v) {
    for (int f = 0; f < 4; ++f) {
      const ProjectionImage hr = ds.load_hr(v, f);
      const ProjectionImage lr = ds.load_lr(v, f);
      for (float p : hr.pixels) hr_max = std::max(hr_max, p);
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          double s = 0.0;
          for (int j = 0; j < 4; ++j) {
            for (int i = 0; i < 4; ++i) s += hr.at(4 * x + i, 4 * y + j);
          }
          CHECK(std::abs(lr.at(x, y) - s / 16) <= 1e-7);
        }
      }
    }
  }
  CHECK(hr_max == doctest::Approx(1.0f));
  CHECK(ds.time_of(3) == 1.0);
}

}  // TEST_SUITE

TEST_SUITE("io") {

TEST_CASE("PFM round trip is bit exact") {
  oracle::TempDir dir("dsasrgs_pfm");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  ProjectionImage img(13, 7);
  for (auto& p : img.pixels) p = u(rng);
  write_pfm(dir.path() / "a.pfm", img);
  const ProjectionImage back = read_pfm(dir.path() / "a.pfm");
  CHECK(back.width == 13);
  CHECK(back.height == 7);
  CHECK(back.pixels == img.pixels);
  CHECK_THROWS_AS(read_pfm(dir.path() / "missing.pfm"), Error);
}

TEST_CASE("checkpoint round trip and corruption") {
  std::mt19937_64 rng(2);
  const Scene s = oracle::random_scene(rng, 20, 20.0, 1.0, 4.0);
  FieldConfig fc;
  fc.enc3d.table_size_log2 = 10;
  fc.enc4d.table_size_log2 = 10;
  const AttenuationField f = init_field(fc, s.bbox, 4);
  const auto bytes = serialize_checkpoint(s, f, R"({"iterations":3})");
  const Checkpoint ck = parse_checkpoint(bytes);
  CHECK(serialize_checkpoint(ck.scene, ck.field, ck.metadata) == bytes);
  CHECK(ck.metadata.find("\"iterations\":3") != std::string::npos);

  auto bad = bytes;
  bad[0] = 'X';
  try {
    parse_checkpoint(bad);
    FAIL("expected FormatError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FormatError);
  }
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + bytes.size() / 2);
  CHECK_THROWS_AS(parse_checkpoint(cut), Error);
}

TEST_CASE("Adam matches the textbook update and remaps moments") {
  Adam opt({0.9, 0.999, 1e-8});
  const int g = opt.add_group("p", 0.1);
  const int t = opt.add_tensor(g, 2);
  std::vector<float> x{1.0f, -2.0f};
  double m = 0.0, v = 0.0, ref = 1.0;
  for (int step = 1; step <= 5; ++step) {
    const double grad = 0.5 * step;
    opt.begin_step();
    const std::vector<double> grads{grad, 0.0};
    opt.update(t, x, grads);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1 - std::pow(0.9, step));
    const double vh = v / (1 - std::pow(0.999, step));
    ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(x[0] == doctest::Approx(ref).epsilon(1e-6));
  CHECK(x[1] == -2.0f);

  const std::vector<std::int64_t> rows{1, -1, 0};
  opt.remap(t, rows, 1);
  CHECK(opt.tensor_size(t) == 3);
  CHECK(opt.first_moment(t)[0] == 0.0);
  CHECK(opt.first_moment(t)[1] == 0.0);
  CHECK(opt.first_moment(t)[2] == doctest::Approx(m));
}

}  // TEST_SUITE
