#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "core/common.hpp"
#include "core/kernels.hpp"
#include "data/dataset.hpp"

namespace add {

namespace {

namespace fs = std::filesystem;

// Next decimal token in a PPM header; whitespace and '#' comments separate
// tokens per the format.
int ppm_int(std::istream& in, const std::string& path, const char* what) {
  int ch = in.get();
  while (ch != EOF && (std::isspace(ch) || ch == '#')) {
    if (ch == '#')
      while (ch != EOF && ch != '\n') ch = in.get();
    ch = in.get();
  }
  ADD_CHECK(ch != EOF && std::isdigit(ch), ErrorCode::Format, "%s: malformed PPM header (%s)",
            path.c_str(), what);
  int64_t value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ADD_CHECK(value <= 1 << 20, ErrorCode::Format, "%s: PPM header value out of range (%s)",
              path.c_str(), what);
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return static_cast<int>(value);
}

LandmarkSet sidecar_landmarks(const nlohmann::json& j, const std::string& path, int h, int w) {
  ADD_CHECK(j.contains("points") && j["points"].is_array(), ErrorCode::Format,
            "%s: sidecar needs a \"points\" array", path.c_str());
  LandmarkSet lm;
  lm.h = h;
  lm.w = w;
  for (const auto& p : j["points"]) {
    ADD_CHECK(p.is_array() && p.size() == 2 && p[0].is_number() && p[1].is_number(),
              ErrorCode::Format, "%s: each landmark must be an [x, y] number pair", path.c_str());
    lm.points.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return lm;
}

}  // namespace

Tensor ppm_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  ADD_CHECK(in.good(), ErrorCode::Io, "%s: cannot open image file", path.c_str());
  ADD_CHECK(in.get() == 'P' && in.get() == '6', ErrorCode::Format,
            "%s: not a binary PPM (expected magic \"P6\")", path.c_str());
  const int w = ppm_int(in, path, "width");
  const int h = ppm_int(in, path, "height");
  const int maxval = ppm_int(in, path, "maxval");
  ADD_CHECK(w >= 1 && h >= 1, ErrorCode::Format, "%s: invalid PPM size %dx%d", path.c_str(), h, w);
  ADD_CHECK(maxval >= 1 && maxval <= 65535, ErrorCode::Format, "%s: invalid PPM maxval %d",
            path.c_str(), maxval);
  const int sep = in.get();
  ADD_CHECK(sep != EOF && std::isspace(sep), ErrorCode::Format,
            "%s: PPM header must end with a whitespace byte", path.c_str());

  const int bytes_per_value = maxval < 256 ? 1 : 2;
  const int64_t n_values = static_cast<int64_t>(w) * h * 3;
  std::vector<unsigned char> raw(static_cast<size_t>(n_values * bytes_per_value));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  ADD_CHECK(in.gcount() == static_cast<std::streamsize>(raw.size()), ErrorCode::Format,
            "%s: truncated PPM pixel data", path.c_str());

  // Interleaved RGB rows to planar [3,h,w], normalized by maxval. Division
  // per sample keeps v/maxval correctly rounded (a premultiplied reciprocal
  // would round twice).
  Tensor img = Tensor::empty({3, h, w});
  for (int64_t i = 0; i < static_cast<int64_t>(w) * h; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      const size_t at = static_cast<size_t>((i * 3 + c) * bytes_per_value);
      const int v = bytes_per_value == 1 ? raw[at] : (raw[at] << 8) | raw[at + 1];
      img.data()[c * w * h + i] = static_cast<float>(v) / static_cast<float>(maxval);
    }
  return img;
}

void ppm_write(const std::string& path, const Tensor& img) {
  ADD_CHECK_ARG(img.rank() == 3 && (img.dim(0) == 1 || img.dim(0) == 3),
                "ppm_write needs a [1,h,w] or [3,h,w] image, got %s", shape_str(img.shape()).c_str());
  const int ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  ADD_CHECK(out.good(), ErrorCode::Io, "%s: cannot open file for writing", path.c_str());
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<size_t>(w) * static_cast<size_t>(h) * 3);
  for (int64_t i = 0; i < static_cast<int64_t>(w) * h; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = img.data()[static_cast<int64_t>(ch == 1 ? 0 : c) * w * h + i];
      const float clamped = std::min(1.0f, std::max(0.0f, v));
      raw.push_back(static_cast<unsigned char>(std::lround(clamped * 255.0f)));
    }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  ADD_CHECK(out.good(), ErrorCode::Io, "%s: write failed", path.c_str());
}

Tensor resize_bilinear(const Tensor& img, int oh, int ow) {
  ADD_CHECK_ARG(img.rank() == 3, "resize_bilinear needs a [C,H,W] image, got %s",
                shape_str(img.shape()).c_str());
  ADD_CHECK_ARG(oh >= 1 && ow >= 1, "resize_bilinear target %dx%d invalid", oh, ow);
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (oh == h && ow == w) return img.clone_values();
  Tensor out = Tensor::empty({c, oh, ow});
  kern::bilinear(img.data(), c, h, w, out.data(), oh, ow);
  return out;
}

std::vector<Sample> ingest(const std::string& dir_path, int out_h, int out_w) {
  ADD_CHECK_ARG(out_h >= 1 && out_w >= 1, "ingest target size %dx%d invalid", out_h, out_w);
  ADD_CHECK(fs::is_directory(dir_path), ErrorCode::Io, "%s: not a directory", dir_path.c_str());

  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(dir_path))
    if (entry.is_regular_file() && entry.path().extension() == ".ppm")
      images.push_back(entry.path());
  std::sort(images.begin(), images.end());

  std::vector<Sample> samples;
  for (const fs::path& path : images) {
    fs::path sidecar = path;
    sidecar.replace_extension(".json");
    if (!fs::exists(sidecar)) {
      std::fprintf(stderr, "warning: %s has no landmark sidecar; skipping\n", path.c_str());
      continue;
    }
    std::ifstream in(sidecar);
    ADD_CHECK(in.good(), ErrorCode::Io, "%s: cannot open sidecar", sidecar.c_str());
    const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    ADD_CHECK(!j.is_discarded() && j.is_object(), ErrorCode::Format,
              "%s: sidecar is not a JSON object", sidecar.c_str());
    ADD_CHECK(j.contains("label") && j["label"].is_number_integer(), ErrorCode::Format,
              "%s: sidecar needs an integer \"label\"", sidecar.c_str());
    const int label = j["label"].get<int>();
    ADD_CHECK(label == 0 || label == 1, ErrorCode::Format, "%s: label must be 0 or 1, got %d",
              sidecar.c_str(), label);

    const Tensor raw = ppm_read(path.string());
    const int in_h = raw.dim(1), in_w = raw.dim(2);
    Sample s;
    s.image = resize_bilinear(raw, out_h, out_w);
    s.label = label;
    s.landmarks = sidecar_landmarks(j, sidecar.string(), out_h, out_w);
    // Align-corners coordinate mapping, matching the pixel resampling.
    const double sx = in_w > 1 ? static_cast<double>(out_w - 1) / (in_w - 1) : 0.0;
    const double sy = in_h > 1 ? static_cast<double>(out_h - 1) / (in_h - 1) : 0.0;
    for (Point& p : s.landmarks.points) {
      p.x *= sx;
      p.y *= sy;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace add
