#include "mcmdpo/synth.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mcmdpo {
namespace synth {

namespace {

constexpr int kNumShapes = 3;
constexpr int kNumColors = 4;

// Palette chosen so every color keeps a distinct channel-and-pixel mean
// after patch pooling (the model's vision path pools each patch to one
// value), and no shape/color combination collides with another.
constexpr std::array<std::array<double, 3>, kNumColors> kPalette = {{
    {1.00, 0.05, 0.00},  // red, mean 0.35
    {0.00, 0.60, 0.00},  // green, mean 0.20
    {0.00, 0.00, 0.15},  // blue, mean 0.05
    {0.75, 0.75, 0.00},  // yellow, mean 0.50
}};

bool shape_covers(Shape shape, int y, int x, int side) {
  switch (shape) {
    case Shape::square:
      return true;
    case Shape::circle: {
      // Small centered disk: its pooled patch signature stays well away
      // from every square and triangle signature.
      const double cy = (side - 1) / 2.0, cx = (side - 1) / 2.0;
      const double r = side * 0.3125;
      const double dy = y - cy, dx = x - cx;
      return dy * dy + dx * dx <= r * r;
    }
    case Shape::triangle:
      return y >= x;  // lower-left triangle
  }
  return false;
}

std::string cell_phrase(int cell, int grid) {
  if (grid == 2) {
    switch (cell) {
      case 0: return "top left";
      case 1: return "top right";
      case 2: return "bottom left";
      case 3: return "bottom right";
    }
  }
  return "row " + std::to_string(cell / grid) + " column " + std::to_string(cell % grid);
}

// All templates expand to exactly seven tokens, so the conditioning length
// (and with it every response position) is identical across samples.
const std::vector<std::string>& color_context_templates() {
  static const std::vector<std::string> t = {
      "my favorite {} thing from today again",
      "look at the {} one i found",
      "sharing this {} photo with everyone now",
  };
  return t;
}

const std::vector<std::string>& shape_context_templates() {
  static const std::vector<std::string> t = {
      "a {} caught my eye this morning",
      "posting my little {} find once more",
      "check out this {} from my walk",
  };
  return t;
}

std::string expand(const std::string& tpl, const std::string& value) {
  const size_t at = tpl.find("{}");
  return tpl.substr(0, at) + value + tpl.substr(at + 2);
}

// Canonical key for distinctness across splits.
uint64_t scene_key(const SceneSpec& scene) {
  uint64_t key = 1;
  for (const SceneObject& o : scene.objects) {
    const uint64_t code = static_cast<uint64_t>(o.cell) * 16 +
                          static_cast<uint64_t>(o.shape) * 4 + static_cast<uint64_t>(o.color);
    key = key * 1000003ull + code + 1;
  }
  return key;
}

SceneSpec random_scene(const SynthConfig& cfg, Rng& rng) {
  SceneSpec scene;
  scene.grid = cfg.grid;
  const int cells = cfg.grid * cfg.grid;
  const int count = cfg.min_objects +
                    static_cast<int>(rng.uniform_index(
                        static_cast<uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
  std::vector<int> cell_ids(static_cast<size_t>(cells));
  for (int i = 0; i < cells; ++i) cell_ids[static_cast<size_t>(i)] = i;
  rng.shuffle(cell_ids);
  cell_ids.resize(static_cast<size_t>(count));
  std::sort(cell_ids.begin(), cell_ids.end());  // raster order
  for (int cell : cell_ids) {
    SceneObject o;
    o.cell = cell;
    o.shape = static_cast<Shape>(rng.uniform_index(kNumShapes));
    o.color = static_cast<Color>(rng.uniform_index(kNumColors));
    scene.objects.push_back(o);
  }
  return scene;
}

std::string make_context(const SceneSpec& scene, Rng& rng) {
  const SceneObject& obj = scene.objects[rng.uniform_index(scene.objects.size())];
  if (rng.uniform_index(2) == 0) {
    const auto& templates = color_context_templates();
    return expand(templates[rng.uniform_index(templates.size())], color_word(obj.color));
  }
  const auto& templates = shape_context_templates();
  return expand(templates[rng.uniform_index(templates.size())], shape_word(obj.shape));
}

}  // namespace

const char* shape_word(Shape s) {
  switch (s) {
    case Shape::circle: return "circle";
    case Shape::square: return "square";
    case Shape::triangle: return "triangle";
  }
  return "?";
}

const char* color_word(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
  }
  return "?";
}

void SceneSpec::validate() const {
  if (grid < 1) throw std::invalid_argument("SceneSpec: grid must be >= 1");
  if (objects.empty() || objects.size() > 3) {
    throw std::invalid_argument("SceneSpec: scene needs 1..3 objects");
  }
  std::set<int> cells;
  for (const SceneObject& o : objects) {
    if (o.cell < 0 || o.cell >= grid * grid) {
      throw std::invalid_argument("SceneSpec: cell out of range");
    }
    if (!cells.insert(o.cell).second) {
      throw std::invalid_argument("SceneSpec: duplicate cell");
    }
  }
}

void SynthConfig::validate() const {
  if (grid < 1 || cell_pixels < 1) throw std::invalid_argument("SynthConfig: bad grid");
  if (min_objects < 1 || max_objects < min_objects || max_objects > 3) {
    throw std::invalid_argument("SynthConfig: object count range must fit 1..3");
  }
  if ((grid * cell_pixels) % patch_size != 0) {
    throw std::invalid_argument("SynthConfig: image side " + std::to_string(grid * cell_pixels) +
                                " not divisible by patch size " + std::to_string(patch_size));
  }
}

int64_t scene_space_size(const SynthConfig& cfg) {
  const int cells = cfg.grid * cfg.grid;
  auto choose = [](int64_t n, int64_t k) {
    int64_t r = 1;
    for (int64_t i = 0; i < k; ++i) r = r * (n - i) / (i + 1);
    return r;
  };
  int64_t total = 0;
  for (int k = cfg.min_objects; k <= std::min(cfg.max_objects, cells); ++k) {
    int64_t per_object = kNumShapes * kNumColors;
    int64_t combos = 1;
    for (int i = 0; i < k; ++i) combos *= per_object;
    total += choose(cells, k) * combos;
  }
  return total;
}

ImageTensor render(const SceneSpec& scene, const SynthConfig& cfg) {
  scene.validate();
  cfg.validate();
  const int side = cfg.grid * cfg.cell_pixels;
  ImageTensor img = ImageTensor::filled(side, side, 3, 1.0);  // white background
  for (const SceneObject& o : scene.objects) {
    const int cy = (o.cell / cfg.grid) * cfg.cell_pixels;
    const int cx = (o.cell % cfg.grid) * cfg.cell_pixels;
    const auto& rgb = kPalette[static_cast<size_t>(o.color)];
    for (int y = 0; y < cfg.cell_pixels; ++y) {
      for (int x = 0; x < cfg.cell_pixels; ++x) {
        if (!shape_covers(o.shape, y, x, cfg.cell_pixels)) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(cy + y, cx + x, ch) = rgb[static_cast<size_t>(ch)];
      }
    }
  }
  return img;
}

std::string describe_scene(const SceneSpec& scene, const SynthConfig& cfg) {
  // Position-first phrasing: the cell words precede the attribute words
  // they ground.
  std::ostringstream os;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    const SceneObject& o = scene.objects[i];
    if (i > 0) os << " and ";
    os << "in the " << cell_phrase(o.cell, cfg.grid) << " a " << color_word(o.color) << " "
       << shape_word(o.shape);
  }
  os << " .";
  return os.str();
}

std::string corrupt_alt_text(const SynthSample& sample, const SynthConfig& cfg, Rng& rng) {
  SceneSpec corrupted = sample.scene;
  SceneObject& victim = corrupted.objects[rng.uniform_index(corrupted.objects.size())];
  if (rng.uniform_index(2) == 0) {
    const int offset = 1 + static_cast<int>(rng.uniform_index(kNumColors - 1));
    victim.color = static_cast<Color>((static_cast<int>(victim.color) + offset) % kNumColors);
  } else {
    const int offset = 1 + static_cast<int>(rng.uniform_index(kNumShapes - 1));
    victim.shape = static_cast<Shape>((static_cast<int>(victim.shape) + offset) % kNumShapes);
  }
  return describe_scene(corrupted, cfg);
}

SynthDataset gen_dataset(uint64_t seed, int n_train, int n_pref, int n_test,
                         const SynthConfig& cfg) {
  cfg.validate();
  if (n_train < 1 || n_pref < 1 || n_test < 1) {
    throw std::invalid_argument("gen_dataset: split sizes must be >= 1");
  }
  const int64_t total = static_cast<int64_t>(n_train) + n_pref + n_test;
  const int64_t space = scene_space_size(cfg);
  if (total > space) {
    throw std::invalid_argument("gen_dataset: " + std::to_string(total) +
                                " samples requested but the scene space holds only " +
                                std::to_string(space));
  }

  Rng rng(seed);
  std::set<uint64_t> used;
  SynthDataset out;
  out.prompt_text = cfg.prompt_text;

  int index = 0;
  auto fill = [&](std::vector<SynthSample>& split, int count, bool with_rejection) {
    split.reserve(static_cast<size_t>(count));
    while (static_cast<int>(split.size()) < count) {
      SceneSpec scene = random_scene(cfg, rng);
      if (!used.insert(scene_key(scene)).second) continue;
      SynthSample s;
      s.scene = scene;
      s.image = render(scene, cfg);
      s.context = make_context(scene, rng);
      s.alt_text = describe_scene(scene, cfg);
      std::ostringstream id;
      id << "synth-" << seed << "-" << index++;
      s.id = id.str();
      if (with_rejection) s.rejected_alt_text = corrupt_alt_text(s, cfg, rng);
      split.push_back(std::move(s));
    }
  };
  fill(out.train, n_train, false);
  fill(out.pref, n_pref, true);
  fill(out.test, n_test, true);

  std::vector<std::string> texts;
  texts.push_back(cfg.prompt_text);
  for (const auto* split : {&out.train, &out.pref, &out.test}) {
    for (const SynthSample& s : *split) {
      texts.push_back(s.context);
      texts.push_back(s.alt_text);
      if (!s.rejected_alt_text.empty()) texts.push_back(s.rejected_alt_text);
    }
  }
  out.vocab = Vocabulary::build(texts, 96);
  return out;
}

}  // namespace synth
}  // namespace mcmdpo
