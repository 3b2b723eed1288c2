#pragma once

#include <cmath>
#include <cstddef>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mender/attributes.hpp"
#include "mender/errors.hpp"
#include "mender/prompt.hpp"
#include "mender/rng.hpp"
#include "mender/scene.hpp"
#include "mender/tensor.hpp"
#include "mender/tracklet.hpp"

namespace mender {

enum class TokenFamily { kImage, kTracklet, kPrompt };

inline constexpr std::size_t kPromptTokenCap = 250;
inline constexpr std::size_t kImageTokenCap = 500;
inline constexpr std::size_t kTrackletTokenCap = 500;

inline std::size_t token_cap(TokenFamily family) {
  switch (family) {
    case TokenFamily::kImage: return kImageTokenCap;
    case TokenFamily::kTracklet: return kTrackletTokenCap;
    case TokenFamily::kPrompt: return kPromptTokenCap;
  }
  return 0;
}

// Default box size of the per-cell reference anchors.
inline constexpr double kAnchorSize = 0.08;

/// Where a token row came from: a grid cell (image), a tracklet id, or a
/// vocabulary word / sentence (prompt).
struct TokenOrigin {
  int index = -1;
  std::string text;
  Box anchor{};
};

struct TokenMatrix {
  TokenFamily family = TokenFamily::kImage;
  Matrix tokens;
  std::vector<TokenOrigin> origins;

  std::size_t count() const noexcept { return tokens.rows(); }
  std::size_t width() const noexcept { return tokens.cols(); }

  void validate(std::size_t model_dim) const {
    if (tokens.rows() > token_cap(family)) {
      throw ConfigError(std::to_string(tokens.rows()) + " tokens exceed the family cap of " +
                        std::to_string(token_cap(family)));
    }
    if (tokens.rows() > 0 && tokens.cols() != model_dim) {
      throw ShapeError("token width " + std::to_string(tokens.cols()) + " != model width " +
                       std::to_string(model_dim));
    }
    if (origins.size() != tokens.rows()) throw ShapeError("token origins out of sync with rows");
  }
};

/// Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^{2i/d}), PE[pos, 2i+1] = cos(·).
inline Matrix positional_encoding(std::size_t n, std::size_t d) {
  if (d % 2 != 0) throw ConfigError("positional encoding width must be even, got " + std::to_string(d));
  Matrix pe(n, d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Feature resizer: Linear -> LayerNorm -> Dropout.

struct ResizerParams {
  Matrix weight;  // in × D
  Matrix bias;    // 1 × D
  Matrix gain;    // 1 × D, layer-norm scale
  Matrix shift;   // 1 × D, layer-norm bias
  double dropout_rate = 0.0;

  std::size_t input_width() const noexcept { return weight.rows(); }
  std::size_t output_width() const noexcept { return weight.cols(); }

  static ResizerParams random(std::size_t in, std::size_t d, double dropout_rate, Rng& rng) {
    ResizerParams p;
    p.weight = Matrix::random_normal(in, d, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    p.bias = Matrix(1, d);
    p.gain = Matrix(1, d, 1.0);
    p.shift = Matrix(1, d);
    p.dropout_rate = dropout_rate;
    return p;
  }
};

/// Dropout is inactive unless `rng` is given (training mode).
inline Matrix feature_resize(const Matrix& raw, const ResizerParams& params, Rng* rng = nullptr) {
  if (raw.cols() != params.input_width()) {
    throw ShapeError("feature_resize: input width " + std::to_string(raw.cols()) + " != " +
                     std::to_string(params.input_width()));
  }
  Matrix out = layer_norm(add_row_broadcast(matmul(raw, params.weight), params.bias.row(0)),
                          params.gain.row(0), params.shift.row(0));
  if (rng != nullptr && params.dropout_rate > 0.0) {
    const double keep = 1.0 - params.dropout_rate;
    for (double& v : out.data()) v = rng->bernoulli(keep) ? v / keep : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Image tokens

struct EncoderConfig {
  int grid_w = 8;
  int grid_h = 8;
  std::size_t model_dim = 64;
  std::size_t projection_width = 32;  // attribute one-hot projection width
  std::uint64_t seed = 7;             // seeds the fixed attribute projection
  double dropout_rate = 0.1;

  static constexpr std::size_t kGeometryWidth = 4;
  std::size_t raw_width() const noexcept { return projection_width + kGeometryWidth; }
  std::size_t cells() const noexcept { return static_cast<std::size_t>(grid_w * grid_h); }

  void validate() const {
    if (grid_w <= 0 || grid_h <= 0) throw ConfigError("grid must be positive");
    if (cells() > kImageTokenCap) {
      throw ConfigError("grid of " + std::to_string(cells()) + " cells exceeds the image token cap");
    }
    if (model_dim == 0 || model_dim % 2 != 0) throw ConfigError("model width must be even");
  }

  bool operator==(const EncoderConfig&) const = default;
};

/// Fixed random projection of the attribute one-hot, N(0,1) entries.
inline Matrix attribute_projection(const EncoderConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 0xa77e));
  return Matrix::random_normal(kAttributeCount, cfg.projection_width, 1.0, rng);
}

struct EncoderParams {
  Matrix no_object;  // 1 × raw_width, learned embedding for empty cells
  ResizerParams resizer;

  static EncoderParams random(const EncoderConfig& cfg, Rng& rng) {
    EncoderParams p;
    p.no_object = Matrix::random_normal(1, cfg.raw_width(), 1.0, rng);
    p.resizer = ResizerParams::random(cfg.raw_width(), cfg.model_dim, cfg.dropout_rate, rng);
    return p;
  }
};

/// Pre-resizer cell features. Occupied cells hold the projected attribute
/// one-hot followed by the object's sub-cell geometry; empty cells are flagged
/// and take the learned no-object row.
struct RawCellFeatures {
  Matrix occupied;              // M × raw_width, zero rows for empty cells
  std::vector<char> empty;      // M flags
  std::vector<int> occupant;    // track id per cell, 0 if empty
};

// Scale of the sub-cell geometry relative to the attribute projection.
inline constexpr double kGeometryGain = 4.0;

/// Center offset within the cell and size deviation from the anchor, each
/// mapped to roughly [−1, 1] and multiplied by kGeometryGain.
inline std::array<double, EncoderConfig::kGeometryWidth> geometry_features(const Box& b, int grid_w,
                                                                            int grid_h) {
  const Box cell = cell_box(cell_index(b, grid_w, grid_h), grid_w, grid_h);
  const double g = kGeometryGain;
  return {g * 2.0 * (b.cx - cell.cx) * grid_w, g * 2.0 * (b.cy - cell.cy) * grid_h, g * 50.0 * (b.w - kAnchorSize),
          g * 50.0 * (b.h - kAnchorSize)};
}

inline RawCellFeatures raw_cell_features(const SceneFrame& frame, const EncoderConfig& cfg,
                                         const Matrix& projection) {
  cfg.validate();
  if (frame.grid_w != cfg.grid_w || frame.grid_h != cfg.grid_h) {
    throw ConfigError("frame grid does not match encoder grid");
  }
  const std::size_t m = cfg.cells();
  RawCellFeatures raw{Matrix(m, cfg.raw_width()), std::vector<char>(m, 1), std::vector<int>(m, 0)};
  std::vector<double> occupant_area(m, -1.0);
  for (const auto& obj : frame.objects) {
    const std::size_t cell = cell_index(obj.box, cfg.grid_w, cfg.grid_h);
    // The larger object owns a shared cell.
    if (obj.box.area() <= occupant_area[cell]) continue;
    occupant_area[cell] = obj.box.area();
    raw.empty[cell] = 0;
    raw.occupant[cell] = obj.track_id;
    auto dst = raw.occupied.row(cell);
    std::fill(dst.begin(), dst.end(), 0.0);
    const std::size_t hot[3] = {obj.attributes.category,
                                kCategories.size() + obj.attributes.color,
                                kCategories.size() + kColors.size() + obj.attributes.action};
    for (std::size_t h : hot)
      for (std::size_t c = 0; c < cfg.projection_width; ++c) dst[c] += projection(h, c);
    const auto geo = geometry_features(obj.box, cfg.grid_w, cfg.grid_h);
    for (std::size_t g = 0; g < geo.size(); ++g) dst[cfg.projection_width + g] = geo[g];
  }
  return raw;
}

inline std::vector<TokenOrigin> image_origins(const EncoderConfig& cfg) {
  std::vector<TokenOrigin> origins(cfg.cells());
  for (std::size_t c = 0; c < origins.size(); ++c) {
    const Box cell = cell_box(c, cfg.grid_w, cfg.grid_h);
    origins[c].index = static_cast<int>(c);
    origins[c].anchor = {cell.cx, cell.cy, kAnchorSize, kAnchorSize};
  }
  return origins;
}

/// enc(I_t): one token per grid cell.
inline TokenMatrix encode_image(const SceneFrame& frame, const EncoderConfig& cfg,
                                const EncoderParams& params, const Matrix& projection,
                                Rng* dropout_rng = nullptr) {
  const RawCellFeatures raw = raw_cell_features(frame, cfg, projection);
  Matrix input = raw.occupied;
  for (std::size_t c = 0; c < input.rows(); ++c) {
    if (!raw.empty[c]) continue;
    std::copy(params.no_object.row(0).begin(), params.no_object.row(0).end(), input.row(c).begin());
  }
  TokenMatrix out{TokenFamily::kImage,
                  feature_resize(input, params.resizer, dropout_rng) +
                      positional_encoding(cfg.cells(), cfg.model_dim),
                  image_origins(cfg)};
  out.validate(cfg.model_dim);
  return out;
}

// ---------------------------------------------------------------------------
// Prompt tokens

/// Controlled vocabulary with a learned embedding table. Ids 0..2 are the
/// sequence-start, sentence-separator and unknown-word sentinels.
class Vocabulary {
 public:
  static constexpr std::size_t kStart = 0;
  static constexpr std::size_t kSeparator = 1;
  static constexpr std::size_t kUnknown = 2;

  Vocabulary() = default;

  Vocabulary(std::vector<std::string> words, Matrix table) : words_(std::move(words)), table_(std::move(table)) {
    if (table_.rows() != words_.size()) throw ShapeError("vocabulary table rows != word count");
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second) throw ConfigError("duplicate vocabulary word '" + words_[i] + "'");
    }
    if (words_.size() < 3 || words_[kStart] != "[CLS]" || words_[kSeparator] != "[SEP]" ||
        words_[kUnknown] != "[UNK]") {
      throw ConfigError("vocabulary must begin with [CLS], [SEP], [UNK]");
    }
  }

  /// Sentinels, the world's attribute words and the function words that occur
  /// in captions, definitions and retrieval templates.
  static std::vector<std::string> default_words() {
    std::vector<std::string> w{"[CLS]", "[SEP]", "[UNK]"};
    auto add = [&w](std::string_view s) {
      if (std::find(w.begin(), w.end(), s) == w.end()) w.emplace_back(s);
    };
    for (const auto& c : kCategories) {
      add(c.name);
      for (auto s : c.synonyms) add(s);
    }
    for (auto c : kColors) add(c);
    for (auto a : kActions) add(a);
    for (const auto& c : kCategories)
      for (const auto& word : split_words(c.definition)) add(word);
    for (std::string_view f : {"a", "an", "the", "is", "on", "in", "of", "and", "with", "wearing",
                               "appearing", "longest", "scene", "people", "human", "crossing",
                               "street", "near", "left", "right"})
      add(f);
    return w;
  }

  static Vocabulary random(std::vector<std::string> words, std::size_t d, std::uint64_t seed,
                           double stddev = 0.3) {
    Rng rng(mix_seed(seed, 0x70cab));
    Matrix table = Matrix::random_normal(words.size(), d, stddev, rng);
    return Vocabulary(std::move(words), std::move(table));
  }

  /// One word per line, UTF-8; blank lines ignored. Embeddings are seeded.
  static Vocabulary load_words(const std::string& path, std::size_t d, std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary file " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      std::string t = trim(line);
      if (!t.empty()) words.push_back(std::move(t));
    }
    return random(std::move(words), d, seed);
  }

  void save_words(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocabulary file " + path);
    for (const auto& w : words_) out << w << '\n';
  }

  std::optional<std::size_t> find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t lookup(std::string_view word) const { return find(word).value_or(kUnknown); }

  const std::vector<std::string>& words() const noexcept { return words_; }
  const Matrix& table() const noexcept { return table_; }
  Matrix& table() noexcept { return table_; }
  std::size_t size() const noexcept { return words_.size(); }
  std::size_t width() const noexcept { return table_.cols(); }

 private:
  std::vector<std::string> words_;
  Matrix table_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Vocabulary rows pooled (averaged) into each prompt token.
struct PromptTokenization {
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::string> labels;
  std::vector<std::string> unknown_words;
};

inline PromptTokenization tokenize_prompt(const PromptText& prompt, const Vocabulary& vocab,
                                          ScenarioKind kind) {
  PromptTokenization t;
  for (const auto& phrase : prompt.phrases) {
    const auto words = split_words(phrase);
    if (words.empty()) continue;
    std::vector<std::size_t> ids;
    for (const auto& w : words) {
      const std::size_t id = vocab.lookup(w);
      if (id == Vocabulary::kUnknown) t.unknown_words.push_back(w);
      ids.push_back(id);
    }
    if (is_word_level(kind)) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        t.groups.push_back({ids[i]});
        t.labels.push_back(words[i]);
      }
    } else {
      t.groups.push_back(std::move(ids));
      t.labels.push_back(phrase);
    }
  }
  if (t.groups.empty()) throw EmptyPromptError("prompt is empty after tokenization");
  if (t.groups.size() > kPromptTokenCap) {
    throw ConfigError(std::to_string(t.groups.size()) + " prompt tokens exceed the cap of " +
                      std::to_string(kPromptTokenCap));
  }
  return t;
}

/// Mean of the given table rows for every group.
inline Matrix pool_rows(const Matrix& table, const std::vector<std::vector<std::size_t>>& groups) {
  Matrix out(groups.size(), table.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) continue;
    auto dst = out.row(g);
    for (std::size_t id : groups[g]) {
      if (id >= table.rows()) throw IndexError("pool_rows index out of range");
      const auto src = table.row(id);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(groups[g].size());
    for (double& v : dst) v *= inv;
  }
  return out;
}

/// emb(P): one row per word (nm./syn.) or per sentence (def./cap./retr.),
/// sentence rows being the mean of their word embeddings.
inline TokenMatrix embed_prompt(const PromptText& prompt, const Vocabulary& vocab, ScenarioKind kind) {
  const PromptTokenization t = tokenize_prompt(prompt, vocab, kind);
  TokenMatrix out{TokenFamily::kPrompt, pool_rows(vocab.table(), t.groups), {}};
  for (std::size_t g = 0; g < t.groups.size(); ++g) {
    out.origins.push_back({static_cast<int>(t.groups[g].size() == 1 ? t.groups[g][0] : Vocabulary::kUnknown),
                           t.labels[g], {}});
  }
  return out;
}

inline TokenMatrix embed_prompt(const PromptText& prompt, const Vocabulary& vocab) {
  return embed_prompt(prompt, vocab, prompt.kind);
}

// ---------------------------------------------------------------------------
// Tracklet tokens

/// ext(T_{t-1}): row j is the mean of the previous-frame image-token rows
/// assigned to tracklet j; tracklets without an assignment use their stored
/// feature.
inline TokenMatrix extract_tracklets(std::span<const Tracklet> tracklets, const TokenMatrix& prev_image_tokens) {
  const std::size_t d = prev_image_tokens.width();
  TokenMatrix out{TokenFamily::kTracklet, Matrix(0, d), {}};
  out.tokens = Matrix(tracklets.size(), d);
  for (std::size_t j = 0; j < tracklets.size(); ++j) {
    const Tracklet& tr = tracklets[j];
    auto dst = out.tokens.row(j);
    if (tr.assigned_token_indices.empty()) {
      if (tr.feature.size() != d) throw ShapeError("stored tracklet feature has the wrong width");
      std::copy(tr.feature.begin(), tr.feature.end(), dst.begin());
    } else {
      for (std::size_t i : tr.assigned_token_indices) {
        if (i >= prev_image_tokens.count()) throw IndexError("tracklet assignment outside the previous frame");
        const auto src = prev_image_tokens.tokens.row(i);
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
      const double inv = 1.0 / static_cast<double>(tr.assigned_token_indices.size());
      for (double& v : dst) v *= inv;
    }
    out.origins.push_back({tr.id, {}, tr.box});
  }
  if (out.count() > kTrackletTokenCap) throw ConfigError("tracklet tokens exceed the cap");
  return out;
}

}  // namespace mender
