#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcmdpo/image.hpp"
#include "mcmdpo/rng.hpp"
#include "mcmdpo/tokens.hpp"

namespace mcmdpo {
namespace synth {

enum class Shape { circle, square, triangle };
enum class Color { red, green, blue, yellow };
const char* shape_word(Shape s);
const char* color_word(Color c);

struct SceneObject {
  Shape shape;
  Color color;
  int cell;  // raster index into the grid
  bool operator==(const SceneObject&) const = default;
};

struct SceneSpec {
  int grid = 2;
  std::vector<SceneObject> objects;  // 1..3, distinct cells
  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

struct SynthConfig {
  int grid = 2;
  int cell_pixels = 8;
  int min_objects = 1;
  int max_objects = 3;
  int patch_size = 4;  // rendered side must divide by this
  std::string prompt_text = "write a short alt text";
  void validate() const;
};

struct SynthSample {
  std::string id;
  SceneSpec scene;
  ImageTensor image;
  std::string context;
  std::string alt_text;
  std::string rejected_alt_text;  // one attribute flipped; empty for train split
};

struct SynthDataset {
  std::vector<SynthSample> train, pref, test;
  Vocabulary vocab;
  std::string prompt_text;
};

// Number of distinct scenes the config admits.
int64_t scene_space_size(const SynthConfig& config);

// Filled color blocks per shape mask on a white background, values in [0,1].
ImageTensor render(const SceneSpec& scene, const SynthConfig& config);

// Canonical raster-order description mentioning every object exactly once.
std::string describe_scene(const SceneSpec& scene, const SynthConfig& config);

// Flips one attribute (color or shape) of one object to a wrong value and
// re-describes; the result contradicts the rendered image in exactly one
// content word.
std::string corrupt_alt_text(const SynthSample& sample, const SynthConfig& config, Rng& rng);

// Deterministic dataset with disjoint scene draws across splits and a
// vocabulary covering every generated token (prompt included).
SynthDataset gen_dataset(uint64_t seed, int n_train, int n_pref, int n_test,
                         const SynthConfig& config = {});

}  // namespace synth
}  // namespace mcmdpo
