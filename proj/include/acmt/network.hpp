#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "acmt/diff/tape.hpp"
#include "acmt/diff/tensor.hpp"
#include "acmt/error.hpp"
#include "acmt/geometry.hpp"
#include "acmt/rng.hpp"

namespace acmt::net {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;
using diff::Var;

/// How the facial-to-bony correspondence R is produced.
enum class Variant {
  acmt,     // learned cross point-set attention
  no_corr,  // R regressed from facial features alone
  closest,  // fixed nearest-bony-point indicator
};

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::acmt: return "acmt";
    case Variant::no_corr: return "no_corr";
    case Variant::closest: return "closest";
  }
  return "";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "acmt") return Variant::acmt;
  if (s == "no_corr") return Variant::no_corr;
  if (s == "closest") return Variant::closest;
  throw Error(ErrorCategory::usage, "unknown variant '" + s + "' (expected acmt, no_corr or closest)");
}

/// Hierarchical point encoder: 4 set-abstraction stages followed by 4 feature-propagation
/// stages that mirror them back to the input resolution.
struct EncoderConfig {
  std::size_t n_points = 4096;
  std::array<std::size_t, 4> sa_points{1024, 512, 256, 64};
  std::array<double, 4> radii{0.1, 0.2, 0.4, 0.8};
  std::array<std::size_t, 4> max_neighbors{32, 32, 32, 32};
  // Output widths of SA1..SA4 then FP1..FP4.
  std::array<std::size_t, 8> widths{128, 256, 512, 1024, 512, 256, 128, 128};
  std::size_t interp_k = 3;

  static EncoderConfig full() { return EncoderConfig{}; }

  /// Reduced preset for gradient checks and desk-scale experiments.
  static EncoderConfig toy(std::size_t n_points = 256) {
    EncoderConfig c;
    c.n_points = n_points;
    c.sa_points = {n_points / 4, n_points / 8, n_points / 16, n_points / 32};
    c.radii = {0.2, 0.4, 0.8, 1.6};
    c.widths = {32, 64, 128, 256, 128, 64, 32, 32};
    return c;
  }

  /// Point counts at the output of every stage, encoders then decoders.
  std::array<std::size_t, 8> stage_point_counts() const {
    return {sa_points[0], sa_points[1], sa_points[2], sa_points[3], sa_points[2], sa_points[1], sa_points[0], n_points};
  }

  std::size_t output_width() const { return widths[7]; }

  void validate() const {
    require(sa_points[3] >= 1, ErrorCategory::precondition, "encoder: deepest stage needs at least one point");
    require(n_points >= sa_points[0], ErrorCategory::precondition, "encoder: input smaller than first stage");
    for (int s = 0; s < 3; ++s)
      require(sa_points[s] >= sa_points[s + 1], ErrorCategory::precondition,
              "encoder: stage point counts must not increase");
    for (double r : radii) require(r > 0.0, ErrorCategory::precondition, "encoder: radii must be positive");
    for (auto w : widths) require(w >= 1, ErrorCategory::precondition, "encoder: widths must be positive");
    require(interp_k >= 1, ErrorCategory::precondition, "encoder: interpolation k must be positive");
  }
};

struct CPSAConfig {
  std::size_t embed_dim = 64;
  std::size_t movement_dim = 64;
};

struct ModelConfig {
  std::string preset = "toy";
  Variant variant = Variant::acmt;
  EncoderConfig encoder = EncoderConfig::toy();
  CPSAConfig cpsa;
  std::size_t n_facial = 256;
  std::size_t n_bony = 256;
  std::uint64_t init_seed = 0;

  static ModelConfig make(const std::string& preset, std::size_t n_points, Variant variant, std::uint64_t seed) {
    ModelConfig c;
    c.preset = preset;
    c.variant = variant;
    if (preset == "full") {
      c.encoder = EncoderConfig::full();
      c.encoder.n_points = n_points;
      require(n_points == 4096, ErrorCategory::usage, "the full preset is defined for 4096 points");
    } else if (preset == "toy") {
      c.encoder = EncoderConfig::toy(n_points);
    } else {
      throw Error(ErrorCategory::usage, "unknown preset '" + preset + "' (expected full or toy)");
    }
    c.n_facial = c.n_bony = n_points;
    c.init_seed = seed;
    c.validate();
    return c;
  }

  void validate() const {
    encoder.validate();
    require(cpsa.embed_dim >= 1 && cpsa.movement_dim >= 1, ErrorCategory::precondition,
            "embedding and movement widths must be positive");
    require(n_facial == encoder.n_points && n_bony == encoder.n_points, ErrorCategory::precondition,
            "point counts must match the encoder input size");
  }

  nlohmann::json to_json() const {
    return {{"preset", preset},
            {"variant", variant_name(variant)},
            {"n_facial", n_facial},
            {"n_bony", n_bony},
            {"init_seed", init_seed},
            {"encoder",
             {{"n_points", encoder.n_points},
              {"sa_points", encoder.sa_points},
              {"radii", encoder.radii},
              {"max_neighbors", encoder.max_neighbors},
              {"widths", encoder.widths},
              {"interp_k", encoder.interp_k}}},
            {"cpsa", {{"embed_dim", cpsa.embed_dim}, {"movement_dim", cpsa.movement_dim}}}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    try {
      ModelConfig c;
      c.preset = j.at("preset").get<std::string>();
      c.variant = parse_variant(j.at("variant").get<std::string>());
      c.n_facial = j.at("n_facial").get<std::size_t>();
      c.n_bony = j.at("n_bony").get<std::size_t>();
      c.init_seed = j.at("init_seed").get<std::uint64_t>();
      const auto& e = j.at("encoder");
      c.encoder.n_points = e.at("n_points").get<std::size_t>();
      c.encoder.sa_points = e.at("sa_points").get<std::array<std::size_t, 4>>();
      c.encoder.radii = e.at("radii").get<std::array<double, 4>>();
      c.encoder.max_neighbors = e.at("max_neighbors").get<std::array<std::size_t, 4>>();
      c.encoder.widths = e.at("widths").get<std::array<std::size_t, 8>>();
      c.encoder.interp_k = e.at("interp_k").get<std::size_t>();
      c.cpsa.embed_dim = j.at("cpsa").at("embed_dim").get<std::size_t>();
      c.cpsa.movement_dim = j.at("cpsa").at("movement_dim").get<std::size_t>();
      c.validate();
      return c;
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCategory::mismatch, std::string("model header is malformed: ") + ex.what());
    }
  }
};

// ---------------------------------------------------------------------------
// Parameter layout

struct LayerShape {
  std::string name;
  std::size_t in;
  std::size_t out;
};

/// Pointwise layers of one encoder, in initialization order.
inline std::vector<LayerShape> encoder_layers(const EncoderConfig& cfg, const std::string& prefix) {
  std::vector<LayerShape> layers;
  std::size_t in = 3;  // level-0 features are the coordinates
  std::array<std::size_t, 5> level_width{3, 0, 0, 0, 0};
  for (int s = 0; s < 4; ++s) {
    const std::size_t w = cfg.widths[s];
    const std::size_t hidden = std::max<std::size_t>(1, w / 2);
    layers.push_back({prefix + ".sa" + std::to_string(s) + ".l0", in + 3, hidden});
    layers.push_back({prefix + ".sa" + std::to_string(s) + ".l1", hidden, w});
    in = w;
    level_width[s + 1] = w;
  }
  std::size_t cur = cfg.widths[3];
  for (int s = 0; s < 4; ++s) {
    const int level = 3 - s;  // destination level
    const std::size_t w = cfg.widths[4 + s];
    layers.push_back({prefix + ".fp" + std::to_string(s), cur + level_width[level], w});
    cur = w;
  }
  return layers;
}

inline std::vector<LayerShape> model_layers(const ModelConfig& cfg) {
  std::vector<LayerShape> layers;
  const std::size_t feat = cfg.encoder.output_width();
  if (cfg.variant != Variant::closest) {
    for (auto& l : encoder_layers(cfg.encoder, "facial")) layers.push_back(l);
  }
  if (cfg.variant == Variant::acmt) {
    for (auto& l : encoder_layers(cfg.encoder, "bony")) layers.push_back(l);
    layers.push_back({"theta", feat, cfg.cpsa.embed_dim});
    layers.push_back({"phi", feat, cfg.cpsa.embed_dim});
  } else if (cfg.variant == Variant::no_corr) {
    layers.push_back({"theta", feat, cfg.n_bony});
  }
  layers.push_back({"g", 6, cfg.cpsa.movement_dim});
  layers.push_back({"head", cfg.cpsa.movement_dim, 3});
  return layers;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases, drawn in layer order.
inline ParamStore init_params(const ModelConfig& cfg) {
  const auto layers = model_layers(cfg);
  ParamStore params;
  params.reserve(2 * layers.size());
  Rng rng(cfg.init_seed);
  for (const auto& l : layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    Tensor w(l.in, l.out), b(1, l.out);
    for (auto& v : w.values()) v = rng.uniform(-bound, bound);
    for (auto& v : b.values()) v = rng.uniform(-bound, bound);
    params.add(l.name + ".weight", std::move(w));
    params.add(l.name + ".bias", std::move(b));
  }
  return params;
}

/// Rejects parameter sets whose names or shapes differ from the configured layout.
inline void check_params(const ModelConfig& cfg, const ParamStore& params) {
  const auto layers = model_layers(cfg);
  require(params.size() == 2 * layers.size(), ErrorCategory::mismatch,
          "checkpoint holds " + std::to_string(params.size()) + " blocks, preset expects " +
              std::to_string(2 * layers.size()));
  for (const auto& l : layers) {
    const auto& w = params.get(l.name + ".weight").value;
    const auto& b = params.get(l.name + ".bias").value;
    require(w.rank() == 2 && w.rows() == l.in && w.cols() == l.out, ErrorCategory::mismatch,
            "parameter '" + l.name + ".weight' has shape " + w.shape_string());
    require(b.rank() == 2 && b.rows() == 1 && b.cols() == l.out, ErrorCategory::mismatch,
            "parameter '" + l.name + ".bias' has shape " + b.shape_string());
  }
}

inline Var layer(Tape& tape, ParamStore& params, const std::string& name, Var x) {
  return diff::pointwise_linear(x, tape.parameter(params.get(name + ".weight")),
                                tape.parameter(params.get(name + ".bias")));
}

inline Tensor coords_tensor(const PointSet& ps) { return Tensor::matrix(ps.size(), 3, ps.flat()); }

// ---------------------------------------------------------------------------
// Operations

/// Point-wise features (N x widths[7]); row i belongs to input point i.
inline Var encode_pointset(Tape& tape, const PointSet& ps, const EncoderConfig& cfg, ParamStore& params,
                           const std::string& prefix) {
  cfg.validate();
  require(ps.units() == Units::normalized, ErrorCategory::mismatch, "encoder expects normalized coordinates");
  require(ps.size() >= cfg.sa_points[0], ErrorCategory::precondition,
          "encoder: " + std::to_string(ps.size()) + " points is below the first stage's " +
              std::to_string(cfg.sa_points[0]));

  std::vector<PointSet> level_xyz{ps};
  std::vector<Var> level_feat{tape.constant(coords_tensor(ps))};

  for (int s = 0; s < 4; ++s) {
    const PointSet& cur = level_xyz.back();
    const auto picked = farthest_point_sample_canonical(cur, cfg.sa_points[s]);
    PointSet centers = cur.subset(picked);
    const auto groups = ball_query(centers, cur, cfg.radii[s], cfg.max_neighbors[s]);

    std::vector<std::size_t> flat, offsets{0};
    std::vector<double> rel;
    for (std::size_t c = 0; c < groups.size(); ++c) {
      for (auto i : groups[c]) {
        flat.push_back(i);
        const Vec3 d = cur[i] - centers[c];
        rel.insert(rel.end(), d.begin(), d.end());
      }
      offsets.push_back(flat.size());
    }
    Var rel_t = tape.constant(Tensor::matrix(flat.size(), 3, std::move(rel)));
    Var grouped = diff::concat(rel_t, diff::gather_rows(level_feat.back(), std::move(flat)));
    const std::string base = prefix + ".sa" + std::to_string(s);
    Var h = diff::relu(layer(tape, params, base + ".l0", grouped));
    h = diff::relu(layer(tape, params, base + ".l1", h));
    level_feat.push_back(diff::max_reduce(h, std::move(offsets)));
    level_xyz.push_back(std::move(centers));
  }

  Var cur = level_feat[4];
  for (int s = 0; s < 4; ++s) {
    const int level = 3 - s;
    const PointSet& src = level_xyz[level + 1];
    const PointSet& dst = level_xyz[level];
    auto stencil = idw_stencil(src, dst, std::min(cfg.interp_k, src.size()));
    Var up = diff::weighted_rows(cur, std::move(stencil.index), std::move(stencil.weight), stencil.k);
    cur = diff::relu(layer(tape, params, prefix + ".fp" + std::to_string(s), diff::concat(up, level_feat[level])));
  }
  return cur;
}

struct Correlation {
  Var f;  // raw dot-product affinities, N1 x N2
  Var r;  // f / N2
};

/// Affinity between embedded facial and bony features, normalized by the bony count.
inline Correlation cpsa_correlation(Var facial_features, Var bony_features, ParamStore& params) {
  Tape& tape = facial_features.tape();
  Var theta = layer(tape, params, "theta", facial_features);
  Var phi = layer(tape, params, "phi", bony_features);
  Var f = diff::matmul_nt(theta, phi);
  const double n2 = static_cast<double>(bony_features.rows());
  return {f, diff::scale(f, 1.0 / n2)};
}

/// g applied to every 6-channel row [P_B | V_B].
inline Var movement_features(Tape& tape, const PointSet& bony, const DisplacementField& bony_disp, ParamStore& params) {
  require(bony.size() == bony_disp.size(), ErrorCategory::shape,
          "movement_features: " + std::to_string(bony.size()) + " bony points but " +
              std::to_string(bony_disp.size()) + " movement vectors");
  require(bony.units() == Units::normalized && bony_disp.units() == Units::normalized, ErrorCategory::mismatch,
          "movement_features expects normalized inputs");
  Tensor in(bony.size(), 6);
  for (std::size_t j = 0; j < bony.size(); ++j)
    for (int c = 0; c < 3; ++c) {
      in(j, c) = bony[j][c];
      in(j, 3 + c) = bony_disp[j][c];
    }
  return layer(tape, params, "g", tape.constant(std::move(in)));
}

/// Row i = sum_j R(i, j) * F_VB row j.
inline Var apply_correspondence(Var r, Var bony_movement) { return diff::matmul(r, bony_movement); }

/// Row i = (1/N2) sum_j f(i, j) * F_VB row j.
inline Var transform_movement(Var f, Var bony_movement) {
  return apply_correspondence(diff::scale(f, 1.0 / static_cast<double>(bony_movement.rows())), bony_movement);
}

/// Linear map to 3 channels, then x -> 2 sigmoid(x) - 1 so every component lies in (-1, 1).
inline Var predict_movement(Var facial_movement, ParamStore& params) {
  Tape& tape = facial_movement.tape();
  return diff::affine(diff::sigmoid(layer(tape, params, "head", facial_movement)), 2.0, -1.0);
}

/// Normalized network inputs for one case.
struct CaseInputs {
  PointSet facial;
  PointSet bony;
  DisplacementField bony_disp;
};

struct ForwardOutput {
  Var predicted;                 // P_F + V_F, N1 x 3
  Var movement;                  // V_F, N1 x 3
  std::optional<Var> relation;   // learned R (acmt / no_corr)
  std::vector<std::size_t> nearest;  // closest-point variant: bony index per facial point
};

inline void check_inputs(const ModelConfig& cfg, const CaseInputs& in) {
  require(in.facial.units() == Units::normalized && in.bony.units() == Units::normalized &&
              in.bony_disp.units() == Units::normalized,
          ErrorCategory::mismatch, "forward expects normalized inputs");
  require(in.facial.size() == cfg.n_facial && in.bony.size() == cfg.n_bony, ErrorCategory::mismatch,
          "case has " + std::to_string(in.facial.size()) + "/" + std::to_string(in.bony.size()) +
              " facial/bony points, model expects " + std::to_string(cfg.n_facial) + "/" + std::to_string(cfg.n_bony));
}

inline ForwardOutput finish(Tape& tape, const CaseInputs& in, Var facial_movement_features, ParamStore& params) {
  ForwardOutput out;
  out.movement = predict_movement(facial_movement_features, params);
  out.predicted = diff::scale_add(1.0, tape.constant(coords_tensor(in.facial)), 1.0, out.movement);
  return out;
}

inline ForwardOutput acmt_forward(Tape& tape, const ModelConfig& cfg, ParamStore& params, const CaseInputs& in) {
  check_inputs(cfg, in);
  Var ff = encode_pointset(tape, in.facial, cfg.encoder, params, "facial");
  Var fb = encode_pointset(tape, in.bony, cfg.encoder, params, "bony");
  const Correlation corr = cpsa_correlation(ff, fb, params);
  Var fvb = movement_features(tape, in.bony, in.bony_disp, params);
  ForwardOutput out = finish(tape, in, apply_correspondence(corr.r, fvb), params);
  out.relation = corr.r;
  return out;
}

/// R regressed from facial features alone: theta maps each facial feature row straight to N2 scores.
inline ForwardOutput no_correspondence_forward(Tape& tape, const ModelConfig& cfg, ParamStore& params,
                                               const CaseInputs& in) {
  check_inputs(cfg, in);
  Var ff = encode_pointset(tape, in.facial, cfg.encoder, params, "facial");
  Var r = diff::scale(layer(tape, params, "theta", ff), 1.0 / static_cast<double>(in.bony.size()));
  Var fvb = movement_features(tape, in.bony, in.bony_disp, params);
  ForwardOutput out = finish(tape, in, apply_correspondence(r, fvb), params);
  out.relation = r;
  return out;
}

/// R fixed to the nearest-bony-point indicator. Applying a one-hot row is a row gather.
inline ForwardOutput closest_point_forward(Tape& tape, const ModelConfig& cfg, ParamStore& params,
                                           const CaseInputs& in) {
  check_inputs(cfg, in);
  auto nearest = nearest_indices(in.facial, in.bony);
  Var fvb = movement_features(tape, in.bony, in.bony_disp, params);
  ForwardOutput out = finish(tape, in, diff::gather_rows(fvb, nearest), params);
  out.nearest = std::move(nearest);
  return out;
}

inline ForwardOutput forward(Tape& tape, const ModelConfig& cfg, ParamStore& params, const CaseInputs& in) {
  switch (cfg.variant) {
    case Variant::acmt: return acmt_forward(tape, cfg, params, in);
    case Variant::no_corr: return no_correspondence_forward(tape, cfg, params, in);
    case Variant::closest: return closest_point_forward(tape, cfg, params, in);
  }
  throw Error(ErrorCategory::precondition, "unknown variant");
}

}  // namespace acmt::net
