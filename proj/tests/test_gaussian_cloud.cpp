#include <doctest.h>

#include <fstream>
#include <random>

#include "helpers.hpp"
#include "splatct/gaussian_cloud.hpp"
#include "splatct/io.hpp"

using namespace splatct;
using namespace splatct::testing;

TEST_CASE("covariance assembly") {
  RadiativeGaussian g;
  g.rho = 1.0;
  g.scale_mm = Vec3(1.0, 2.0, 3.0);
  g.rotation = Vec4(1, 0, 0, 0);

  SUBCASE("identity rotation gives diag(s^2)") {
    const Mat3 sigma = covariance(g);
    Mat3 expected = Vec3(1.0, 4.0, 9.0).asDiagonal();
    CHECK((sigma - expected).cwiseAbs().maxCoeff() < 1e-15);
  }

  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SUBCASE("determinant is rotation invariant") {
    for (int i = 0; i < 20; ++i) {
      g.rotation = Vec4(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
      const double expected = std::pow(1.0 * 2.0 * 3.0, 2);
      CHECK(covariance(g).determinant() == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("eigenvalues are the squared scales") {
    for (int i = 0; i < 20; ++i) {
      g.rotation = Vec4(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
      Eigen::SelfAdjointEigenSolver<Mat3> eig(covariance(g));
      const Vec3 ev = eig.eigenvalues();
      CHECK(std::abs(ev[0] - 1.0) < 1e-9);
      CHECK(std::abs(ev[1] - 4.0) < 1e-9);
      CHECK(std::abs(ev[2] - 9.0) < 1e-9);
    }
  }
}

TEST_CASE("density_at") {
  GaussianCloud cloud(1e-4);
  RadiativeGaussian g;
  g.rho = 0.7;
  g.position_mm = Vec3(0.1, -0.2, 0.3);
  g.scale_mm = Vec3(0.2, 0.2, 0.2);
  cloud.add_kernel(g);

  SUBCASE("center value is rho") {
    CHECK(density_at(cloud, g.position_mm) == doctest::Approx(0.7).epsilon(1e-12));
  }

  SUBCASE("isotropic kernel at Mahalanobis distance 1") {
    const Vec3 x = g.position_mm + Vec3(0.2, 0, 0);
    CHECK(density_at(cloud, x) ==
          doctest::Approx(0.7 * std::exp(-0.5)).epsilon(1e-12));
  }

  SUBCASE("two co-located kernels add") {
    cloud.add_kernel(g);
    CHECK(density_at(cloud, g.position_mm) == doctest::Approx(1.4).epsilon(1e-12));
  }
}

TEST_CASE("density_at is permutation invariant and linear") {
  std::mt19937_64 rng(17);
  GaussianCloud cloud = random_cloud(rng, 12);
  std::uniform_real_distribution<double> upos(-0.5, 0.5);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec3 x(upos(rng), upos(rng), upos(rng));
    const double full = density_at(cloud, x);

    // permuted copy
    GaussianCloud perm(cloud.s_min());
    std::vector<int> order(cloud.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i : order) perm.add_kernel(cloud.kernel(i));
    CHECK(std::abs(density_at(perm, x) - full) < 1e-12 * std::max(1.0, full));

    // sum of singletons
    double split_sum = 0.0;
    for (int i = 0; i < cloud.size(); ++i) {
      GaussianCloud single(cloud.s_min());
      single.add_kernel(cloud.kernel(i));
      split_sum += density_at(single, x);
    }
    CHECK(std::abs(split_sum - full) < 1e-12 * std::max(1.0, full));
  }
}

TEST_CASE("activations") {
  SUBCASE("softplus asymptotes to identity") {
    CHECK(act_density(50.0) == doctest::Approx(50.0).epsilon(1e-12));
  }
  SUBCASE("round trips") {
    for (double x : {-3.0, -0.5, 0.0, 1.7, 25.0})
      CHECK(act_density_inv(act_density(x)) == doctest::Approx(x).epsilon(1e-9));
    for (double s : {1e-3, 0.05, 2.0})
      CHECK(act_scale(act_scale_inv(s, 1e-4), 1e-4) == doctest::Approx(s).epsilon(1e-12));
  }
  SUBCASE("scale floor") {
    CHECK(act_scale(-745.0, 1e-4) == 1e-4); // exp underflows to exactly zero
    CHECK(act_scale(-1e10, 1e-4) == 1e-4);
  }
  SUBCASE("inverse domain errors") {
    CHECK_THROWS_AS(act_density_inv(0.0), InverseOutOfDomain);
    CHECK_THROWS_AS(act_density_inv(-1.0), InverseOutOfDomain);
    CHECK_THROWS_AS(act_scale_inv(1e-4, 1e-4), InverseOutOfDomain);
  }
}

TEST_CASE("covariance gradient matches finite differences") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> gauss(0.0, 1.0);
  GaussianCloud cloud = random_cloud(rng, 3);

  // random symmetric upstream gradient
  Mat3 upstream;
  upstream << gauss(rng), gauss(rng), gauss(rng),
              0, gauss(rng), gauss(rng),
              0, 0, gauss(rng);
  upstream = (upstream + upstream.transpose()).eval();

  for (int i = 0; i < cloud.size(); ++i) {
    CloudGrads grads;
    grads.resize(cloud.size());
    accumulate_covariance_param_grads(cloud, i, upstream, grads);

    auto loss = [&](const GaussianCloud& c) {
      return (upstream.array() * c.covariance_at(i).array()).sum();
    };

    for (int k = 0; k < 3; ++k) {
      const double saved = cloud.scale_raw[3 * i + k];
      const double h = 1e-6 * std::max(1.0, std::abs(saved));
      cloud.scale_raw[3 * i + k] = saved + h;
      const double up = loss(cloud);
      cloud.scale_raw[3 * i + k] = saved - h;
      const double down = loss(cloud);
      cloud.scale_raw[3 * i + k] = saved;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(grads.scale_raw[3 * i + k] - fd) /
                std::max(1e-8, std::abs(fd)) < 1e-5);
    }
    for (int k = 0; k < 4; ++k) {
      const double saved = cloud.rot[4 * i + k];
      const double h = 1e-6;
      cloud.rot[4 * i + k] = saved + h;
      const double up = loss(cloud);
      cloud.rot[4 * i + k] = saved - h;
      const double down = loss(cloud);
      cloud.rot[4 * i + k] = saved;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(grads.rot[4 * i + k] - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("cloud checkpoint round trip") {
  std::mt19937_64 rng(29);
  GaussianCloud cloud = random_cloud(rng, 7);
  const std::string path = "/tmp/splatct_test_cloud.ckpt";
  save_cloud(cloud, path);
  const GaussianCloud back = load_cloud(path);
  REQUIRE(back.size() == cloud.size());
  CHECK(back.s_min() == doctest::Approx(cloud.s_min()));
  for (int i = 0; i < cloud.size(); ++i) {
    CHECK((back.position(i) - cloud.position(i)).norm() < 1e-6);
    CHECK(back.rho(i) == doctest::Approx(cloud.rho(i)).epsilon(1e-6));
    CHECK((back.scale(i) - cloud.scale(i)).norm() < 1e-6);
  }

  // byte-identical rewrite
  save_cloud(back, path + "2");
  save_cloud(load_cloud(path + "2"), path + "3");
  std::ifstream a(path + "2", std::ios::binary), b(path + "3", std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
  CHECK(bytes_a == bytes_b);
}
