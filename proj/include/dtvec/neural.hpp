#pragma once

// Dense MLPs on Eigen: batched forward/backward, Adam, the dueling critic and a
// flat little-endian checkpoint format.
//
// Batches are column-major: one sample per column.

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtvec/error.hpp"

namespace dtvec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class OutputActivation { identity, logistic };

inline const char* to_string(OutputActivation a) {
   return a == OutputActivation::logistic ? "logistic" : "identity";
}

struct Layer {
   Matrix weight;  // out x in
   Vector bias;    // out
};

struct MlpParams {
   std::vector< Layer > layers;
   OutputActivation output = OutputActivation::identity;

   std::size_t input_size() const { return layers.empty() ? 0 : static_cast< std::size_t >(layers.front().weight.cols()); }
   std::size_t output_size() const { return layers.empty() ? 0 : static_cast< std::size_t >(layers.back().weight.rows()); }

   std::size_t parameter_count() const {
      std::size_t n = 0;
      for(const auto& l : layers) {
         n += static_cast< std::size_t >(l.weight.size() + l.bias.size());
      }
      return n;
   }

   /// `sizes` lists every width from input to output; weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
   template < typename Rng >
   static MlpParams create(const std::vector< std::size_t >& sizes, OutputActivation out, Rng& rng) {
      if(sizes.size() < 2) {
         throw DimensionError("mlp: need at least an input and an output width");
      }
      MlpParams p;
      p.output = out;
      for(std::size_t i = 0; i + 1 < sizes.size(); ++i) {
         const auto in = static_cast< Eigen::Index >(sizes[i]);
         const auto o = static_cast< Eigen::Index >(sizes[i + 1]);
         if(in == 0 || o == 0) {
            throw DimensionError("mlp: zero-width layer");
         }
         const double bound = 1.0 / std::sqrt(static_cast< double >(in));
         std::uniform_real_distribution< double > u(-bound, bound);
         Layer l{Matrix(o, in), Vector(o)};
         for(Eigen::Index c = 0; c < in; ++c) {
            for(Eigen::Index r = 0; r < o; ++r) {
               l.weight(r, c) = u(rng);
            }
         }
         for(Eigen::Index r = 0; r < o; ++r) {
            l.bias(r) = u(rng);
         }
         p.layers.push_back(std::move(l));
      }
      return p;
   }

   static MlpParams zeros_like(const MlpParams& other) {
      MlpParams p;
      p.output = other.output;
      for(const auto& l : other.layers) {
         p.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
      }
      return p;
   }

   void check_compatible(const MlpParams& other) const {
      if(other.layers.size() != layers.size()) {
         throw DimensionError("mlp: layer count mismatch");
      }
      for(std::size_t i = 0; i < layers.size(); ++i) {
         if(other.layers[i].weight.rows() != layers[i].weight.rows()
            || other.layers[i].weight.cols() != layers[i].weight.cols()) {
            throw DimensionError("mlp: layer " + std::to_string(i) + " shape mismatch");
         }
      }
   }

   double max_abs_difference(const MlpParams& other) const {
      check_compatible(other);
      double m = 0.0;
      for(std::size_t i = 0; i < layers.size(); ++i) {
         m = std::max(m, (layers[i].weight - other.layers[i].weight).cwiseAbs().maxCoeff());
         m = std::max(m, (layers[i].bias - other.layers[i].bias).cwiseAbs().maxCoeff());
      }
      return m;
   }
};

/// this <- n * source + (1 - n) * this
inline void soft_update(MlpParams& target, const MlpParams& source, double n) {
   target.check_compatible(source);
   for(std::size_t i = 0; i < target.layers.size(); ++i) {
      target.layers[i].weight = n * source.layers[i].weight + (1.0 - n) * target.layers[i].weight;
      target.layers[i].bias = n * source.layers[i].bias + (1.0 - n) * target.layers[i].bias;
   }
}

using MlpGradients = MlpParams;

/// Layer inputs from a forward pass; the last entry is the network output.
struct MlpCache {
   std::vector< Matrix > activations;
};

inline Matrix mlp_forward(const MlpParams& p, const Matrix& input, MlpCache* cache = nullptr) {
   if(p.layers.empty()) {
      throw DimensionError("mlp_forward: empty network");
   }
   if(static_cast< std::size_t >(input.rows()) != p.input_size()) {
      throw DimensionError(
         "mlp_forward: input has " + std::to_string(input.rows()) + " rows, network expects "
         + std::to_string(p.input_size()));
   }
   if(cache) {
      cache->activations.clear();
      cache->activations.push_back(input);
   }
   Matrix x = input;
   for(std::size_t i = 0; i < p.layers.size(); ++i) {
      const auto& l = p.layers[i];
      Matrix z = l.weight * x;
      z.colwise() += l.bias;
      if(i + 1 < p.layers.size()) {
         x = z.cwiseMax(0.0);
      } else if(p.output == OutputActivation::logistic) {
         x = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      } else {
         x = std::move(z);
      }
      if(cache) {
         cache->activations.push_back(x);
      }
   }
   return x;
}

inline Vector mlp_forward(const MlpParams& p, const Vector& input) {
   return mlp_forward(p, Matrix(input), nullptr).col(0);
}

/// Gradients of sum(output_gradient .* output) w.r.t. every parameter; `input_gradient`
/// (optional) receives the gradient w.r.t. the input batch.
inline MlpGradients mlp_backward(
   const MlpParams& p, const MlpCache& cache, const Matrix& output_gradient, Matrix* input_gradient = nullptr) {
   const std::size_t n = p.layers.size();
   if(cache.activations.size() != n + 1) {
      throw DimensionError("mlp_backward: cache does not belong to this network");
   }
   const Matrix& y = cache.activations.back();
   if(output_gradient.rows() != y.rows() || output_gradient.cols() != y.cols()) {
      throw DimensionError("mlp_backward: output gradient shape mismatch");
   }
   MlpGradients g = MlpParams::zeros_like(p);
   Matrix delta = output_gradient;
   if(p.output == OutputActivation::logistic) {
      delta = delta.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
   }
   for(std::size_t k = n; k-- > 0;) {
      const Matrix& a = cache.activations[k];
      g.layers[k].weight.noalias() = delta * a.transpose();
      g.layers[k].bias = delta.rowwise().sum();
      if(k > 0 || input_gradient) {
         Matrix back = p.layers[k].weight.transpose() * delta;
         if(k > 0) {
            delta = back.cwiseProduct(a.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
         } else {
            *input_gradient = std::move(back);
         }
      }
   }
   return g;
}

inline void scale_gradients(MlpGradients& g, double s) {
   for(auto& l : g.layers) {
      l.weight *= s;
      l.bias *= s;
   }
}

inline void add_gradients(MlpGradients& into, const MlpGradients& g) {
   into.check_compatible(g);
   for(std::size_t i = 0; i < into.layers.size(); ++i) {
      into.layers[i].weight += g.layers[i].weight;
      into.layers[i].bias += g.layers[i].bias;
   }
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamConfig {
   double learning_rate = 1e-4;
   double beta1 = 0.9;
   double beta2 = 0.999;
   double epsilon = 1e-8;
};

struct OptimizerState {
   AdamConfig config;
   MlpParams m;
   MlpParams v;
   std::uint64_t step = 0;

   static OptimizerState create(const MlpParams& params, AdamConfig cfg = {}) {
      return {cfg, MlpParams::zeros_like(params), MlpParams::zeros_like(params), 0};
   }
};

/// One bias-corrected Adam step that decreases the objective whose gradient is `g`.
inline void optimizer_step(OptimizerState& s, MlpParams& params, const MlpGradients& g) {
   params.check_compatible(g);
   params.check_compatible(s.m);
   ++s.step;
   const auto& c = s.config;
   const double bc1 = 1.0 - std::pow(c.beta1, static_cast< double >(s.step));
   const double bc2 = 1.0 - std::pow(c.beta2, static_cast< double >(s.step));
   auto update = [&](auto& p, auto& m, auto& v, const auto& grad) {
      m = c.beta1 * m + (1.0 - c.beta1) * grad;
      v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
      p.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
   };
   for(std::size_t i = 0; i < params.layers.size(); ++i) {
      update(params.layers[i].weight, s.m.layers[i].weight, s.v.layers[i].weight, g.layers[i].weight);
      update(params.layers[i].bias, s.m.layers[i].bias, s.v.layers[i].bias, g.layers[i].bias);
   }
}

// ---------------------------------------------------------------------------
// Dueling critic.

/// Q = V(o,w) + A(o,a,others,w) - mean_n A(o,a^n,others,w). With `dueling` off the
/// advantage net alone is the critic. Weights travel inside the observation encoding.
struct DuelingCritic {
   MlpParams advantage;  // obs + own action + others' actions -> 1
   MlpParams value;      // obs -> 1
   bool dueling = true;
   std::size_t observation_size = 0;
   std::size_t action_size = 0;
   std::size_t others_size = 0;

   template < typename Rng >
   static DuelingCritic create(
      std::size_t obs, std::size_t action, std::size_t others, const std::vector< std::size_t >& hidden,
      bool dueling, Rng& rng) {
      DuelingCritic c;
      c.dueling = dueling;
      c.observation_size = obs;
      c.action_size = action;
      c.others_size = others;
      std::vector< std::size_t > a{obs + action + others};
      a.insert(a.end(), hidden.begin(), hidden.end());
      a.push_back(1);
      c.advantage = MlpParams::create(a, OutputActivation::identity, rng);
      std::vector< std::size_t > v{obs};
      v.insert(v.end(), hidden.begin(), hidden.end());
      v.push_back(1);
      c.value = MlpParams::create(v, OutputActivation::identity, rng);
      return c;
   }
};

/// `count` raw actions drawn uniformly from the unit cube, one per column.
template < typename Rng >
Matrix random_actions(std::size_t action_size, std::size_t count, Rng& rng) {
   std::uniform_real_distribution< double > u(0.0, 1.0);
   Matrix m(static_cast< Eigen::Index >(action_size), static_cast< Eigen::Index >(count));
   for(Eigen::Index c = 0; c < m.cols(); ++c) {
      for(Eigen::Index r = 0; r < m.rows(); ++r) {
         m(r, c) = u(rng);
      }
   }
   return m;
}

inline Matrix stack_rows(std::initializer_list< const Matrix* > parts) {
   Eigen::Index rows = 0;
   Eigen::Index cols = -1;
   for(const auto* p : parts) {
      rows += p->rows();
      if(cols < 0) {
         cols = p->cols();
      } else if(p->cols() != cols && p->rows() > 0) {
         throw DimensionError("stack_rows: column count mismatch");
      }
   }
   Matrix out(rows, std::max< Eigen::Index >(cols, 0));
   Eigen::Index r = 0;
   for(const auto* p : parts) {
      if(p->rows() > 0) {
         out.middleRows(r, p->rows()) = *p;
      }
      r += p->rows();
   }
   return out;
}

/// Forward pieces of a batched dueling evaluation, kept for the backward pass.
struct DuelingEval {
   Matrix q;         // 1 x B
   Matrix baseline;  // 1 x B, mean advantage of the random actions (zero if not dueling)
   MlpCache adv_cache;
   MlpCache base_cache;
   MlpCache value_cache;
   Eigen::Index batch = 0;
   Eigen::Index n_random = 0;
};

/// Batched Q for observations/actions/others given column-wise; `random` holds the
/// shared random actions (action_size x N).
inline DuelingEval dueling_forward(
   const DuelingCritic& c, const Matrix& obs, const Matrix& action, const Matrix& others, const Matrix& random) {
   const Eigen::Index B = obs.cols();
   if(static_cast< std::size_t >(obs.rows()) != c.observation_size
      || static_cast< std::size_t >(action.rows()) != c.action_size
      || static_cast< std::size_t >(others.rows()) != c.others_size || action.cols() != B
      || (others.rows() > 0 && others.cols() != B)) {
      throw DimensionError("dueling critic: input block shapes do not match the critic");
   }
   DuelingEval e;
   e.batch = B;
   Matrix others_b = others.rows() > 0 ? others : Matrix(0, B);
   const Matrix in = stack_rows({&obs, &action, &others_b});
   e.q = mlp_forward(c.advantage, in, &e.adv_cache);
   e.baseline = Matrix::Zero(1, B);
   if(!c.dueling) {
      return e;
   }
   if(random.cols() < 1 || static_cast< std::size_t >(random.rows()) != c.action_size) {
      throw DimensionError("dueling critic: need at least one random action of the right size");
   }
   const Eigen::Index N = random.cols();
   e.n_random = N;
   Matrix base_in(in.rows(), B * N);
   for(Eigen::Index n = 0; n < N; ++n) {
      Matrix rep = in;
      rep.middleRows(obs.rows(), action.rows()) = random.col(n).replicate(1, B);
      base_in.middleCols(n * B, B) = rep;
   }
   const Matrix a_rand = mlp_forward(c.advantage, base_in, &e.base_cache);
   // Mean taken as offsets from the first draw, so identical advantages average exactly.
   const Matrix first = a_rand.leftCols(B);
   for(Eigen::Index n = 1; n < N; ++n) {
      e.baseline += a_rand.middleCols(n * B, B) - first;
   }
   e.baseline = first + e.baseline / static_cast< double >(N);
   const Matrix v = mlp_forward(c.value, obs, &e.value_cache);
   e.q = e.q - e.baseline + v;
   return e;
}

struct DuelingGradients {
   MlpGradients advantage;
   MlpGradients value;
   Matrix action_gradient;  // dQ/d(own action) per column, baseline held constant
};

/// Parameter gradients of sum(dq .* Q) plus dQ/da (through the advantage term only).
inline DuelingGradients dueling_backward(const DuelingCritic& c, const DuelingEval& e, const Matrix& dq) {
   DuelingGradients g;
   Matrix din;
   g.advantage = mlp_backward(c.advantage, e.adv_cache, dq, &din);
   g.action_gradient = din.middleRows(static_cast< Eigen::Index >(c.observation_size),
                                      static_cast< Eigen::Index >(c.action_size));
   if(c.dueling) {
      Matrix dbase(1, e.batch * e.n_random);
      for(Eigen::Index n = 0; n < e.n_random; ++n) {
         dbase.middleCols(n * e.batch, e.batch) = -dq / static_cast< double >(e.n_random);
      }
      add_gradients(g.advantage, mlp_backward(c.advantage, e.base_cache, dbase));
      g.value = mlp_backward(c.value, e.value_cache, dq);
   } else {
      g.value = MlpParams::zeros_like(c.value);
   }
   return g;
}

/// Single-sample Q with `n_random` fresh uniform actions for the baseline.
template < typename Rng >
double dueling_q(
   const DuelingCritic& c, const Vector& observation, const Vector& action, const Vector& others,
   std::size_t n_random, Rng& rng) {
   if(n_random < 1) {
      throw Error("dueling_q: n_random must be >= 1");
   }
   const Matrix random = random_actions(c.action_size, n_random, rng);
   return dueling_forward(c, Matrix(observation), Matrix(action), Matrix(others), random).q(0, 0);
}

// ---------------------------------------------------------------------------
// Checkpoints: "DTVCKPT1", u64 LE header length, JSON header, then float64 LE payload
// per network in header order, each layer's weight row-major followed by its bias.

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
   unsigned char b[8];
   for(int i = 0; i < 8; ++i) {
      b[i] = static_cast< unsigned char >((v >> (8 * i)) & 0xffu);
   }
   os.write(reinterpret_cast< const char* >(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
   unsigned char b[8];
   if(!is.read(reinterpret_cast< char* >(b), 8)) {
      throw ParseError("checkpoint: truncated", 0);
   }
   std::uint64_t v = 0;
   for(int i = 0; i < 8; ++i) {
      v |= static_cast< std::uint64_t >(b[i]) << (8 * i);
   }
   return v;
}

inline void write_f64_le(std::ostream& os, double d) {
   write_u64_le(os, std::bit_cast< std::uint64_t >(d));
}

inline double read_f64_le(std::istream& is) {
   return std::bit_cast< double >(read_u64_le(is));
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'D', 'T', 'V', 'C', 'K', 'P', 'T', '1'};

using NamedNetworks = std::map< std::string, MlpParams >;

inline void write_checkpoint(std::ostream& os, const NamedNetworks& nets, const nlohmann::json& extra = {}) {
   nlohmann::ordered_json header;
   header["format"] = "dtvec-mlp";
   header["version"] = 1;
   auto& list = header["networks"] = nlohmann::ordered_json::array();
   for(const auto& [name, p] : nets) {
      nlohmann::ordered_json n;
      n["name"] = name;
      n["output"] = to_string(p.output);
      auto& shapes = n["layers"] = nlohmann::ordered_json::array();
      for(const auto& l : p.layers) {
         shapes.push_back({l.weight.rows(), l.weight.cols()});
      }
      list.push_back(std::move(n));
   }
   if(!extra.is_null()) {
      header["meta"] = nlohmann::ordered_json::parse(extra.dump());
   }
   const std::string text = header.dump();
   os.write(kCheckpointMagic, 8);
   detail::write_u64_le(os, text.size());
   os.write(text.data(), static_cast< std::streamsize >(text.size()));
   for(const auto& [name, p] : nets) {
      for(const auto& l : p.layers) {
         for(Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for(Eigen::Index c = 0; c < l.weight.cols(); ++c) {
               detail::write_f64_le(os, l.weight(r, c));
            }
         }
         for(Eigen::Index r = 0; r < l.bias.size(); ++r) {
            detail::write_f64_le(os, l.bias(r));
         }
      }
   }
}

struct Checkpoint {
   NamedNetworks networks;
   nlohmann::json meta;
};

inline Checkpoint read_checkpoint(std::istream& is) {
   char magic[8];
   if(!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
      throw ParseError("checkpoint: bad magic", 0);
   }
   const auto len = detail::read_u64_le(is);
   if(len > (1u << 26)) {
      throw ParseError("checkpoint: header length out of range", 0);
   }
   std::string text(len, '\0');
   if(!is.read(text.data(), static_cast< std::streamsize >(len))) {
      throw ParseError("checkpoint: truncated header", 0);
   }
   const auto header = nlohmann::json::parse(text, nullptr, false);
   if(header.is_discarded() || !header.contains("networks")) {
      throw ParseError("checkpoint: malformed header", 0);
   }
   Checkpoint ck;
   if(header.contains("meta")) {
      ck.meta = header["meta"];
   }
   for(const auto& n : header["networks"]) {
      MlpParams p;
      p.output = n.at("output").get< std::string >() == "logistic" ? OutputActivation::logistic
                                                                   : OutputActivation::identity;
      for(const auto& shape : n.at("layers")) {
         const auto rows = shape.at(0).get< Eigen::Index >();
         const auto cols = shape.at(1).get< Eigen::Index >();
         Layer l{Matrix(rows, cols), Vector(rows)};
         for(Eigen::Index r = 0; r < rows; ++r) {
            for(Eigen::Index c = 0; c < cols; ++c) {
               l.weight(r, c) = detail::read_f64_le(is);
            }
         }
         for(Eigen::Index r = 0; r < rows; ++r) {
            l.bias(r) = detail::read_f64_le(is);
         }
         p.layers.push_back(std::move(l));
      }
      ck.networks.emplace(n.at("name").get< std::string >(), std::move(p));
   }
   return ck;
}

inline void save_checkpoint(const std::string& path, const NamedNetworks& nets, const nlohmann::json& extra = {}) {
   std::ofstream os(path, std::ios::binary);
   if(!os) {
      throw Error("cannot write checkpoint " + path);
   }
   write_checkpoint(os, nets, extra);
   if(!os) {
      throw Error("error while writing checkpoint " + path);
   }
}

inline Checkpoint load_checkpoint(const std::string& path) {
   std::ifstream is(path, std::ios::binary);
   if(!is) {
      throw Error("cannot open checkpoint " + path);
   }
   return read_checkpoint(is);
}

}  // namespace dtvec
