#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "splatct/io.hpp"

using namespace splatct;
using namespace splatct::testing;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

} // namespace

TEST_CASE("volume container round trip") {
  std::mt19937_64 rng(301);
  DensityVolume vol(grid_for_extent(Vec3(-1, -1, -1), Vec3(1, 1, 1), Vec3i(9, 7, 5)));
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (double& v : vol.data) v = uni(rng);

  const std::string path = "/tmp/splatct_test_vol.vol";
  write_volume(vol, path);
  const DensityVolume back = read_volume(path);
  CHECK(back.dims == vol.dims);
  CHECK((back.origin_mm - vol.origin_mm).norm() < 1e-12);
  for (size_t i = 0; i < vol.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(vol.data[i]).epsilon(1e-6));

  // rewrites are byte-identical
  write_volume(back, path + "2");
  write_volume(read_volume(path + "2"), path + "3");
  CHECK(slurp(path + "2") == slurp(path + "3"));
}

TEST_CASE("image container round trip with metadata") {
  std::mt19937_64 rng(303);
  const Image img = random_image(rng, 12, 8, -1.0, 3.0);
  const std::string path = "/tmp/splatct_test_img.img";
  write_image(img, path, {{"theta_rad", 1.25}});
  std::map<std::string, double> meta;
  const Image back = read_image(path, &meta);
  CHECK(back.width == 12);
  CHECK(back.height == 8);
  CHECK(meta.at("theta_rad") == doctest::Approx(1.25));
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
}

TEST_CASE("container format errors") {
  const std::string path = "/tmp/splatct_test_bad.bin";

  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_volume("/tmp/splatct_does_not_exist.vol"), DataError);
  }

  SUBCASE("wrong kind") {
    std::mt19937_64 rng(305);
    write_image(random_image(rng, 4, 4), path);
    CHECK_THROWS_AS(read_volume(path), FileFormatError);
  }

  SUBCASE("truncated payload") {
    {
      std::ofstream out(path, std::ios::binary);
      out << R"({"kind":"volume","dims":[8,8,8],"spacing_mm":[1,1,1],)"
          << R"("origin_mm":[0,0,0],"dtype":"float32","endianness":"little"})" << "\n";
      const float few[4] = {1, 2, 3, 4};
      out.write(reinterpret_cast<const char*>(few), sizeof(few));
    }
    CHECK_THROWS_AS(read_volume(path), FileFormatError);
  }

  SUBCASE("bad header json") {
    {
      std::ofstream out(path, std::ios::binary);
      out << "not json at all\n";
    }
    CHECK_THROWS_AS(read_volume(path), FileFormatError);
  }

  SUBCASE("unsupported dtype") {
    {
      std::ofstream out(path, std::ios::binary);
      out << R"({"kind":"volume","dims":[2,2,2],"spacing_mm":[1,1,1],)"
          << R"("origin_mm":[0,0,0],"dtype":"float64","endianness":"little"})" << "\n";
    }
    CHECK_THROWS_AS(read_volume(path), FileFormatError);
  }
}

TEST_CASE("png export") {
  std::mt19937_64 rng(307);
  const Image img = random_image(rng, 32, 16, 0.0, 1.0);
  const std::string path = "/tmp/splatct_test.png";
  write_png_gray8(img, path, 0.0, 1.0);
  const std::string bytes = slurp(path);
  REQUIRE(bytes.size() > 8);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x89);
  CHECK(bytes.substr(1, 3) == "PNG");
  CHECK_THROWS_AS(write_png_gray8(img, path, 1.0, 1.0), ConfigError);
}
