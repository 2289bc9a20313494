#pragma once

#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "mask/maskgen.hpp"

namespace add {

// Manipulation footprint of the synthetic "fake" class: the whole face hull,
// or only its lower third (mouth region).
enum class Style {
  FullFace = 0,
  MouthOnly = 1,
};

const char* style_name(Style s);
Style style_from_name(const std::string& name);

struct Sample {
  Tensor image;       // [3,h,w], values in [0,1]
  int label = 0;      // 0 real, 1 fake
  LandmarkSet landmarks;
  // Fake samples only: the polygon that was actually perturbed (generator
  // metadata). Empty for real samples and for ingested images.
  std::vector<Point> manip_region;
};

// Procedural dataset recipe. A spec plus its seed fully determines every
// pixel of every sample.
struct DatasetSpec {
  int n_samples = 0;
  int h = 32;
  int w = 32;
  Style style = Style::FullFace;
  double noise = 0.02;    // film-grain amplitude, applied everywhere
  double perturb = 0.30;  // high-frequency amplitude inside the fake region
  double clutter = 0.45;  // background clutter blend strength
  uint64_t seed = 0;

  bool operator==(const DatasetSpec&) const = default;
};

void validate_dataset_spec(const DatasetSpec& spec);
std::string dataset_spec_to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const std::string& text);

// Builds one sample. The base image consumes the same RNG draws for both
// labels, so twin samples built with equal seeds differ only inside the
// manipulation region.
Sample synth_sample(const DatasetSpec& spec, uint64_t sample_seed, int label);

// n_samples samples with labels alternating real, fake, real, ...
std::vector<Sample> generate(const DatasetSpec& spec);

struct SplitResult {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

// Disjoint, exhaustive, label-stratified split; counts per class follow
// largest-remainder rounding of the fractions, which must sum to 1.
SplitResult split(const std::vector<Sample>& samples, double train_frac, double val_frac,
                  double test_frac, uint64_t seed);

// ---- images on disk -------------------------------------------------------

// Binary P6 PPM. Values are normalized by the file's maxval to [0,1].
Tensor ppm_read(const std::string& path);

// Writes [3,h,w] as-is or [1,h,w] replicated to gray, maxval 255.
void ppm_write(const std::string& path, const Tensor& img);

// Align-corners bilinear resampling of [C,H,W] to [C,oh,ow].
Tensor resize_bilinear(const Tensor& img, int oh, int ow);

// Loads a directory of P6 .ppm images with matching .json landmark sidecars
// ({"points": [[x,y],...], "label": 0|1}); images and landmark coordinates
// are resampled to out_h x out_w. An image without a sidecar is skipped with
// a warning on stderr; a malformed image or sidecar is an error naming the
// file. Files are visited in name order.
std::vector<Sample> ingest(const std::string& dir_path, int out_h, int out_w);

// Where a run's data comes from: a synthetic recipe or an image directory.
struct DataSource {
  bool synthetic = true;
  DatasetSpec spec;  // when synthetic
  std::string dir;   // when not
};

// {"kind": "synthetic", ...spec fields} or {"kind": "dir", "path": "..."}.
DataSource data_source_from_json(const std::string& text);

}  // namespace add
