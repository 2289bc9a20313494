#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "core/common.hpp"
#include "data/dataset.hpp"

namespace add {

namespace {

constexpr int kLandmarkCount = 12;
constexpr int kClutterShapes = 3;

// Keeps the polygon part with y >= ycut (Sutherland-Hodgman, one half-plane).
std::vector<Point> clip_below(const std::vector<Point>& poly, double ycut) {
  std::vector<Point> out;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    const bool a_in = a.y >= ycut;
    const bool b_in = b.y >= ycut;
    if (a_in) out.push_back(a);
    if (a_in != b_in) {
      const double t = (ycut - a.y) / (b.y - a.y);
      out.push_back({a.x + t * (b.x - a.x), ycut});
    }
  }
  return out;
}

}  // namespace

const char* style_name(Style s) {
  switch (s) {
    case Style::FullFace: return "full_face";
    case Style::MouthOnly: return "mouth_only";
  }
  fail(ErrorCode::InvalidArgument, strformat("unknown style %d", static_cast<int>(s)));
}

Style style_from_name(const std::string& name) {
  if (name == "full_face") return Style::FullFace;
  if (name == "mouth_only") return Style::MouthOnly;
  fail(ErrorCode::Format, strformat("unknown manipulation style \"%s\"", name.c_str()));
}

void validate_dataset_spec(const DatasetSpec& spec) {
  ADD_CHECK_CFG(spec.n_samples >= 2, "dataset needs at least 2 samples, got %d", spec.n_samples);
  ADD_CHECK_CFG(spec.n_samples % 2 == 0,
                "dataset needs an even sample count for a balanced real/fake split, got %d",
                spec.n_samples);
  ADD_CHECK_CFG(spec.h >= 16 && spec.w >= 16,
                "image size %dx%d is too small for the manipulation region (minimum 16x16)",
                spec.h, spec.w);
  ADD_CHECK_CFG(spec.h <= 256 && spec.w <= 256, "image size %dx%d exceeds the 256x256 maximum",
                spec.h, spec.w);
  ADD_CHECK_CFG(spec.noise >= 0.0 && spec.noise <= 1.0, "noise must be in [0,1], got %g",
                spec.noise);
  ADD_CHECK_CFG(spec.perturb >= 0.0 && spec.perturb <= 1.0, "perturb must be in [0,1], got %g",
                spec.perturb);
  ADD_CHECK_CFG(spec.clutter >= 0.0 && spec.clutter <= 1.0, "clutter must be in [0,1], got %g",
                spec.clutter);
}

std::string dataset_spec_to_json(const DatasetSpec& spec) {
  nlohmann::json j;
  j["n_samples"] = spec.n_samples;
  j["h"] = spec.h;
  j["w"] = spec.w;
  j["style"] = style_name(spec.style);
  j["noise"] = spec.noise;
  j["perturb"] = spec.perturb;
  j["clutter"] = spec.clutter;
  j["seed"] = spec.seed;
  return j.dump(2);
}

namespace {

DatasetSpec dataset_spec_from_fields(const nlohmann::json& j) {
  ADD_CHECK(j.is_object(), ErrorCode::Format, "dataset spec must be a JSON object");
  DatasetSpec spec;
  auto number = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    ADD_CHECK(j[key].is_number(), ErrorCode::Format, "dataset spec \"%s\" must be a number", key);
    return j[key].get<double>();
  };
  auto integer = [&](const char* key, int64_t fallback) {
    if (!j.contains(key)) return fallback;
    ADD_CHECK(j[key].is_number_integer(), ErrorCode::Format,
              "dataset spec \"%s\" must be an integer", key);
    return j[key].get<int64_t>();
  };
  spec.n_samples = static_cast<int>(integer("n_samples", spec.n_samples));
  spec.h = static_cast<int>(integer("h", spec.h));
  spec.w = static_cast<int>(integer("w", spec.w));
  if (j.contains("style")) {
    ADD_CHECK(j["style"].is_string(), ErrorCode::Format, "dataset spec \"style\" must be a string");
    spec.style = style_from_name(j["style"].get<std::string>());
  }
  spec.noise = number("noise", spec.noise);
  spec.perturb = number("perturb", spec.perturb);
  spec.clutter = number("clutter", spec.clutter);
  spec.seed = static_cast<uint64_t>(integer("seed", static_cast<int64_t>(spec.seed)));
  return spec;
}

}  // namespace

DatasetSpec dataset_spec_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  ADD_CHECK(!j.is_discarded(), ErrorCode::Format, "dataset spec is not valid JSON");
  return dataset_spec_from_fields(j);
}

Sample synth_sample(const DatasetSpec& spec, uint64_t sample_seed, int label) {
  ADD_CHECK_ARG(label == 0 || label == 1, "label must be 0 or 1, got %d", label);
  Rng rng = Rng(spec.seed).split(sample_seed);
  const int h = spec.h, w = spec.w;

  // Face ellipse and landmarks sitting on it.
  const double cx = w * rng.uniform(0.44, 0.56);
  const double cy = h * rng.uniform(0.44, 0.56);
  const double ax = w * rng.uniform(0.26, 0.34);
  const double ay = h * rng.uniform(0.32, 0.40);
  LandmarkSet lm;
  lm.h = h;
  lm.w = w;
  for (int k = 0; k < kLandmarkCount; ++k) {
    const double theta =
        2.0 * M_PI * (k + rng.uniform(-0.2, 0.2)) / static_cast<double>(kLandmarkCount);
    const double r = rng.uniform(0.93, 1.0);
    lm.points.push_back({cx + ax * r * std::cos(theta), cy + ay * r * std::sin(theta)});
  }

  // Smooth scene: per-channel affine background, radially shaded face.
  std::array<double, 3> base, gx, gy;
  for (int c = 0; c < 3; ++c) {
    base[static_cast<size_t>(c)] = rng.uniform(0.15, 0.75);
    gx[static_cast<size_t>(c)] = rng.uniform(-0.3, 0.3);
    gy[static_cast<size_t>(c)] = rng.uniform(-0.3, 0.3);
  }
  const std::array<double, 3> face = {rng.uniform(0.55, 0.85), rng.uniform(0.40, 0.65),
                                      rng.uniform(0.30, 0.55)};
  const double shade = rng.uniform(0.15, 0.30);

  Tensor img = Tensor::empty({3, h, w});
  auto at = [&](int c, int y, int x) -> float& {
    return img.data()[(static_cast<int64_t>(c) * h + y) * w + x];
  };
  auto rho2_of = [&](int x, int y) {
    const double dx = (x - cx) / ax;
    const double dy = (y - cy) / ay;
    return dx * dx + dy * dy;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double rho2 = rho2_of(x, y);
      for (int c = 0; c < 3; ++c) {
        const size_t ci = static_cast<size_t>(c);
        const double v = rho2 <= 1.0
                             ? face[ci] * (1.0 - shade * rho2)
                             : base[ci] + gx[ci] * (static_cast<double>(x) / w) +
                                   gy[ci] * (static_cast<double>(y) / h);
        at(c, y, x) = static_cast<float>(v);
      }
    }

  // Per-sample background clutter so the backdrop never becomes a constant
  // cue; the face ellipse itself is left untouched.
  for (int s = 0; s < kClutterShapes; ++s) {
    const int rw = 3 + static_cast<int>(rng.uniform_int(std::max(1, w / 4)));
    const int rh = 3 + static_cast<int>(rng.uniform_int(std::max(1, h / 4)));
    const int rx = static_cast<int>(rng.uniform_int(std::max(1, w - rw)));
    const int ry = static_cast<int>(rng.uniform_int(std::max(1, h - rh)));
    const std::array<double, 3> col = {rng.uniform(), rng.uniform(), rng.uniform()};
    for (int y = ry; y < std::min(h, ry + rh); ++y)
      for (int x = rx; x < std::min(w, rx + rw); ++x) {
        if (rho2_of(x, y) <= 1.1) continue;
        for (int c = 0; c < 3; ++c) {
          const size_t ci = static_cast<size_t>(c);
          at(c, y, x) = static_cast<float>((1.0 - spec.clutter) * at(c, y, x) +
                                           spec.clutter * col[ci]);
        }
      }
  }

  // Film grain, drawn identically for both labels.
  for (int64_t i = 0; i < img.numel(); ++i)
    img.data()[i] += static_cast<float>(spec.noise * rng.normal());

  Sample out;
  out.label = label;
  out.landmarks = lm;

  if (label == 1) {
    // High-frequency texture perturbation confined to the style region: a
    // pixel-parity carrier plus per-channel noise, so the fake class differs
    // from real in local spectrum rather than in any global statistic.
    const Tensor region = mask_from_landmarks(lm);
    int ylo = h, yhi = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (region.data()[static_cast<int64_t>(y) * w + x] == 1.0f) {
          ylo = std::min(ylo, y);
          yhi = std::max(yhi, y);
        }
    double ycut = ylo;
    if (spec.style == Style::MouthOnly)
      ycut = ylo + 2.0 / 3.0 * static_cast<double>(yhi - ylo);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (region.data()[static_cast<int64_t>(y) * w + x] != 1.0f) continue;
        if (static_cast<double>(y) < ycut) continue;
        const double carrier = ((x + y) & 1) ? 0.5 : -0.5;
        for (int c = 0; c < 3; ++c)
          at(c, y, x) += static_cast<float>(spec.perturb * (carrier + 0.5 * rng.uniform(-1.0, 1.0)));
      }
    std::vector<Point> hull = convex_hull(lm.points);
    if (spec.style == Style::MouthOnly) hull = clip_below(hull, ycut);
    out.manip_region = std::move(hull);
  }

  for (int64_t i = 0; i < img.numel(); ++i)
    img.data()[i] = std::min(1.0f, std::max(0.0f, img.data()[i]));
  out.image = img;
  return out;
}

std::vector<Sample> generate(const DatasetSpec& spec) {
  validate_dataset_spec(spec);
  std::vector<Sample> samples;
  samples.reserve(static_cast<size_t>(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i)
    samples.push_back(synth_sample(spec, static_cast<uint64_t>(i), i % 2));
  return samples;
}

SplitResult split(const std::vector<Sample>& samples, double train_frac, double val_frac,
                  double test_frac, uint64_t seed) {
  ADD_CHECK_CFG(train_frac > 0.0 && val_frac > 0.0 && test_frac > 0.0,
                "split fractions must be positive, got %g/%g/%g", train_frac, val_frac, test_frac);
  const double total = train_frac + val_frac + test_frac;
  ADD_CHECK_CFG(std::abs(total - 1.0) <= 1e-9, "split fractions must sum to 1, got %.12g", total);

  Rng rng(seed);
  std::array<std::vector<size_t>, 2> groups;
  for (size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i].label;
    ADD_CHECK_ARG(label == 0 || label == 1, "sample %zu has label %d outside {0,1}", i, label);
    groups[static_cast<size_t>(label)].push_back(i);
  }

  const std::array<double, 3> fracs = {train_frac, val_frac, test_frac};
  std::array<std::vector<size_t>, 3> picked;
  for (auto& group : groups) {
    rng.shuffle(group);
    const int n = static_cast<int>(group.size());
    std::array<int, 3> count;
    std::array<double, 3> remainder;
    int assigned = 0;
    for (size_t k = 0; k < 3; ++k) {
      const double ideal = fracs[k] * n;
      count[k] = static_cast<int>(std::floor(ideal));
      remainder[k] = ideal - count[k];
      assigned += count[k];
    }
    // Largest remainder takes the leftover units; ties favor earlier splits.
    std::array<size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return remainder[a] > remainder[b]; });
    for (int extra = 0; extra < n - assigned; ++extra) ++count[order[static_cast<size_t>(extra)]];
    size_t pos = 0;
    for (size_t k = 0; k < 3; ++k)
      for (int j = 0; j < count[k]; ++j) picked[k].push_back(group[pos++]);
  }

  SplitResult result;
  std::array<std::vector<Sample>*, 3> dests = {&result.train, &result.val, &result.test};
  for (size_t k = 0; k < 3; ++k) {
    std::sort(picked[k].begin(), picked[k].end());
    dests[k]->reserve(picked[k].size());
    for (size_t i : picked[k]) dests[k]->push_back(samples[i]);
  }
  return result;
}

DataSource data_source_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  ADD_CHECK(!j.is_discarded(), ErrorCode::Format, "data source is not valid JSON");
  ADD_CHECK(j.is_object() && j.contains("kind") && j["kind"].is_string(), ErrorCode::Format,
            "data source needs a \"kind\" of \"synthetic\" or \"dir\"");
  const std::string kind = j["kind"].get<std::string>();
  DataSource source;
  if (kind == "synthetic") {
    source.synthetic = true;
    source.spec = dataset_spec_from_fields(j);
    return source;
  }
  if (kind == "dir") {
    ADD_CHECK(j.contains("path") && j["path"].is_string(), ErrorCode::Format,
              "data source of kind \"dir\" needs a \"path\" string");
    source.synthetic = false;
    source.dir = j["path"].get<std::string>();
    return source;
  }
  fail(ErrorCode::Format, strformat("unknown data source kind \"%s\"", kind.c_str()));
}

}  // namespace add
