#include "splatct/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <png.h>

#include <nlohmann/json.hpp>

#include "splatct/gaussian_cloud.hpp"

namespace splatct {

namespace {

using nlohmann::json;

void write_container(const std::string& path, const json& header,
                     const std::vector<const std::vector<double>*>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << header.dump() << "\n";
  std::vector<float> buf;
  for (const auto* a : arrays) {
    buf.resize(a->size());
    for (size_t i = 0; i < a->size(); ++i) buf[i] = static_cast<float>((*a)[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw DataError("short write to " + path);
}

json read_container(const std::string& path, std::ifstream& in) {
  in.open(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FileFormatError(path + ": missing header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FileFormatError(path + ": bad header: " + e.what());
  }
  if (header.value("endianness", "little") != "little")
    throw FileFormatError(path + ": only little-endian payloads are supported");
  if (header.value("dtype", "float32") != "float32")
    throw FileFormatError(path + ": only float32 payloads are supported");
  return header;
}

void read_payload(std::ifstream& in, const std::string& path,
                  std::vector<double>& out, size_t count) {
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != count * sizeof(float))
    throw FileFormatError(path + ": truncated payload");
  out.resize(count);
  for (size_t i = 0; i < count; ++i) out[i] = buf[i];
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

} // namespace

void write_volume(const DensityVolume& vol, const std::string& path) {
  json h;
  h["kind"] = "volume";
  h["dims"] = {vol.dims.x(), vol.dims.y(), vol.dims.z()};
  h["spacing_mm"] = vec3_json(vol.spacing_mm);
  h["origin_mm"] = vec3_json(vol.origin_mm);
  h["dtype"] = "float32";
  h["endianness"] = "little";
  h["order"] = "x-fastest";
  h["version"] = 1;
  write_container(path, h, {&vol.data});
}

DensityVolume read_volume(const std::string& path) {
  std::ifstream in;
  const json h = read_container(path, in);
  if (h.value("kind", "") != "volume")
    throw FileFormatError(path + ": not a volume file");
  DensityVolume vol;
  try {
    vol.dims = Vec3i(h.at("dims").at(0).get<int>(), h.at("dims").at(1).get<int>(),
                     h.at("dims").at(2).get<int>());
    vol.spacing_mm = vec3_from(h.at("spacing_mm"));
    vol.origin_mm = vec3_from(h.at("origin_mm"));
  } catch (const json::exception& e) {
    throw FileFormatError(path + ": bad volume header: " + e.what());
  }
  if ((vol.dims.array() <= 0).any())
    throw FileFormatError(path + ": non-positive dims");
  read_payload(in, path,
               vol.data, static_cast<size_t>(vol.dims.x()) * vol.dims.y() * vol.dims.z());
  return vol;
}

void write_image(const Image& img, const std::string& path,
                 const std::map<std::string, double>& extra_meta) {
  json h;
  h["kind"] = "image";
  h["dims"] = {img.width, img.height};
  h["dtype"] = "float32";
  h["endianness"] = "little";
  h["order"] = "row-major";
  h["version"] = 1;
  for (const auto& [k, v] : extra_meta) h["meta"][k] = v;
  write_container(path, h, {&img.data});
}

Image read_image(const std::string& path, std::map<std::string, double>* extra_meta) {
  std::ifstream in;
  const json h = read_container(path, in);
  if (h.value("kind", "") != "image")
    throw FileFormatError(path + ": not an image file");
  Image img;
  try {
    img.width = h.at("dims").at(0).get<int>();
    img.height = h.at("dims").at(1).get<int>();
  } catch (const json::exception& e) {
    throw FileFormatError(path + ": bad image header: " + e.what());
  }
  if (img.width <= 0 || img.height <= 0)
    throw FileFormatError(path + ": non-positive dims");
  read_payload(in, path, img.data, static_cast<size_t>(img.width) * img.height);
  if (extra_meta && h.contains("meta"))
    for (auto it = h["meta"].begin(); it != h["meta"].end(); ++it)
      (*extra_meta)[it.key()] = it.value().get<double>();
  return img;
}

void write_png_gray8(const Image& img, const std::string& path,
                     double window_min, double window_max) {
  if (!(window_max > window_min))
    throw ConfigError("png export: window_max must exceed window_min");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw DataError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw DataError("libpng failure writing " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(img.width));
  const double scale = 255.0 / (window_max - window_min);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      const double x = (img.at(u, v) - window_min) * scale;
      row[u] = static_cast<png_byte>(std::clamp(x, 0.0, 255.0) + 0.5);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void save_cloud(const GaussianCloud& cloud, const std::string& path) {
  json h;
  h["kind"] = "gaussian_cloud";
  h["count"] = cloud.size();
  h["activations"] = {{"density", "softplus"}, {"scale", "exp_floor"}};
  h["s_min_mm"] = cloud.s_min();
  h["fields"] = {"rho_raw", "positions_mm", "scales_raw", "rotations_wxyz"};
  h["dtype"] = "float32";
  h["endianness"] = "little";
  h["version"] = 1;
  write_container(path, h, {&cloud.rho_raw, &cloud.pos, &cloud.scale_raw, &cloud.rot});
}

GaussianCloud load_cloud(const std::string& path) {
  std::ifstream in;
  const json h = read_container(path, in);
  if (h.value("kind", "") != "gaussian_cloud")
    throw FileFormatError(path + ": not a gaussian cloud file");
  const int m = h.value("count", -1);
  if (m < 0) throw FileFormatError(path + ": missing kernel count");
  if (h.contains("activations") &&
      (h["activations"].value("density", "") != "softplus" ||
       h["activations"].value("scale", "") != "exp_floor"))
    throw FileFormatError(path + ": unsupported activation names");
  GaussianCloud cloud(h.value("s_min_mm", 1e-4));
  const auto mm = static_cast<size_t>(m);
  read_payload(in, path, cloud.rho_raw, mm);
  read_payload(in, path, cloud.pos, 3 * mm);
  read_payload(in, path, cloud.scale_raw, 3 * mm);
  read_payload(in, path, cloud.rot, 4 * mm);
  cloud.adam_m_rho.assign(mm, 0.0);
  cloud.adam_v_rho.assign(mm, 0.0);
  cloud.adam_m_pos.assign(3 * mm, 0.0);
  cloud.adam_v_pos.assign(3 * mm, 0.0);
  cloud.adam_m_scale.assign(3 * mm, 0.0);
  cloud.adam_v_scale.assign(3 * mm, 0.0);
  cloud.adam_m_rot.assign(4 * mm, 0.0);
  cloud.adam_v_rot.assign(4 * mm, 0.0);
  cloud.grad2d_norm_accum.assign(mm, 0.0);
  cloud.grad_count.assign(mm, 0);
  cloud.grad3d_accum.assign(3 * mm, 0.0);
  return cloud;
}

} // namespace splatct
