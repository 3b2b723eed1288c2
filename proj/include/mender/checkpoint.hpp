#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mender/errors.hpp"
#include "mender/model.hpp"
#include "mender/training.hpp"

namespace mender {

// Text checkpoint:
//
//   mender-checkpoint 1
//   grid <w> <h>
//   model_dim <d>
//   projection_width <p>
//   encoder_seed <s>
//   dropout <rate>
//   heads <h>
//   core <superdiagonal|all-ones>
//   seed <s>
//   words <n>
//   <one word per line>
//   param <name> <rows> <cols>
//   <rows lines of cols values, %.17g>
//   ...
//   optimizer <none|sgd|adam> <step>
//   [moment <m|v> <name> <rows> <cols> + values, per parameter, adam only]
//   end

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void write_matrix(std::ostream& out, const std::string& head, const Matrix& m) {
  out << head << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[32];
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
}

inline std::string expect_key(std::istream& in, const std::string& key) {
  std::string line;
  while (std::getline(in, line) && line.empty()) {}
  std::istringstream ls(line);
  std::string k;
  ls >> k;
  if (k != key) throw SchemaError(key, "checkpoint: expected '" + key + "', found '" + line + "'");
  std::string rest;
  std::getline(ls, rest);
  return trim(rest);
}

inline Matrix read_matrix(std::istream& in, const std::string& what, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.data()) {
    if (!(in >> v)) throw SchemaError(what, "checkpoint: truncated values for " + what);
  }
  return m;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Model& model, const OptimizerState* opt = nullptr,
                             bool adam = true) {
  const ModelConfig& c = model.config;
  out << "mender-checkpoint " << kCheckpointVersion << '\n';
  out << "grid " << c.encoder.grid_w << ' ' << c.encoder.grid_h << '\n';
  out << "model_dim " << c.encoder.model_dim << '\n';
  out << "projection_width " << c.encoder.projection_width << '\n';
  out << "encoder_seed " << c.encoder.seed << '\n';
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", c.encoder.dropout_rate);
  out << "dropout " << buf << '\n';
  out << "heads " << c.heads << '\n';
  out << "core " << (c.core == CoreKind::kAllOnes ? "all-ones" : "superdiagonal") << '\n';
  out << "seed " << c.seed << '\n';
  out << "words " << model.vocab.size() << '\n';
  for (const auto& w : model.vocab.words()) out << w << '\n';
  Model& mutable_model = const_cast<Model&>(model);
  const auto params = parameters(mutable_model);
  for (const auto& p : params) detail::write_matrix(out, "param " + p.name, *p.value);
  if (!opt) {
    out << "optimizer none 0\n";
  } else {
    const bool moments = adam && !opt->m.empty();
    out << "optimizer " << (adam ? "adam" : "sgd") << ' ' << opt->step << '\n';
    if (moments) {
      for (std::size_t n = 0; n < params.size(); ++n) {
        detail::write_matrix(out, "moment m " + params[n].name, opt->m[n]);
        detail::write_matrix(out, "moment v " + params[n].name, opt->v[n]);
      }
    }
  }
  out << "end\n";
}

struct Checkpoint {
  Model model;
  std::optional<OptimizerState> optimizer;
  bool adam = true;
};

inline Checkpoint read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "mender-checkpoint") throw SchemaError("header", "not a mender checkpoint");
  if (version != kCheckpointVersion) throw SchemaError("header", "unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg;
  {
    std::istringstream g(detail::expect_key(in, "grid"));
    g >> cfg.encoder.grid_w >> cfg.encoder.grid_h;
  }
  cfg.encoder.model_dim = std::stoul(detail::expect_key(in, "model_dim"));
  cfg.encoder.projection_width = std::stoul(detail::expect_key(in, "projection_width"));
  cfg.encoder.seed = std::stoull(detail::expect_key(in, "encoder_seed"));
  cfg.encoder.dropout_rate = std::stod(detail::expect_key(in, "dropout"));
  cfg.heads = std::stoul(detail::expect_key(in, "heads"));
  cfg.core = parse_core_kind(detail::expect_key(in, "core"));
  cfg.seed = std::stoull(detail::expect_key(in, "seed"));
  const std::size_t n_words = std::stoul(detail::expect_key(in, "words"));
  std::vector<std::string> words;
  std::string line;
  while (words.size() < n_words && std::getline(in, line)) {
    if (line.empty()) continue;
    words.push_back(line);
  }
  if (words.size() != n_words) throw SchemaError("words", "checkpoint: truncated word list");

  Checkpoint ck;
  ck.model = Model::create(cfg);
  ck.model.vocab = Vocabulary(words, Matrix(n_words, cfg.encoder.model_dim));
  const auto params = parameters(ck.model);
  for (const auto& p : params) {
    std::istringstream h(detail::expect_key(in, "param"));
    std::string name;
    std::size_t rows = 0, cols = 0;
    h >> name >> rows >> cols;
    if (name != p.name) throw SchemaError(p.name, "checkpoint: expected parameter " + p.name + ", found " + name);
    if (rows != p.value->rows() || cols != p.value->cols()) {
      throw SchemaError(p.name, "checkpoint: " + p.name + " has shape " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + ", model expects " + p.value->shape_string());
    }
    *p.value = detail::read_matrix(in, p.name, rows, cols);
  }
  std::istringstream o(detail::expect_key(in, "optimizer"));
  std::string kind;
  std::int64_t step = 0;
  o >> kind >> step;
  if (kind != "none") {
    OptimizerState opt;
    opt.step = step;
    ck.adam = kind == "adam";
    if (ck.adam) {
      std::string peek;
      const auto pos = in.tellg();
      in >> peek;
      in.seekg(pos);
      if (peek == "moment") {
        for (const auto& p : params) {
          for (const char* which : {"m", "v"}) {
            std::istringstream h(detail::expect_key(in, "moment"));
            std::string w, name;
            std::size_t rows = 0, cols = 0;
            h >> w >> name >> rows >> cols;
            if (w != which || name != p.name) throw SchemaError(p.name, "checkpoint: moments out of order");
            Matrix m = detail::read_matrix(in, p.name, rows, cols);
            (w == "m" ? opt.m : opt.v).push_back(std::move(m));
          }
        }
      }
    }
    ck.optimizer = std::move(opt);
  }
  detail::expect_key(in, "end");
  ck.model.weights.validate();
  return ck;
}

inline void save_checkpoint(const std::string& path, const Model& model, const OptimizerState* opt = nullptr,
                            bool adam = true) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  write_checkpoint(out, model, opt, adam);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace mender
