#pragma once

// Deep satisfaction prediction network and the embedding & MLP baseline.
//
// Stage one turns each day of a sample into a vector (embeddings plus
// attention-fused action sequences) and runs two stacked bidirectional GRUs.
// The intent vector w is the sum of the last day's forward and backward
// states of the second layer. Stage two scores p = mean_i sigmoid(w . [I_i; 1])
// over the normalized daily reports.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dspn/dataset.hpp"
#include "dspn/ndgrad.hpp"
#include "dspn/rng.hpp"

namespace dspn::model {

using nd::Parameter;
using nd::ParameterSet;
using nd::Tape;
using nd::Tensor;
using nd::Var;

struct DspnConfig {
  std::size_t n_I = kIndicatorCount;
  std::size_t l = 10;
  std::size_t n_a = 8;
  std::size_t n_e = 8;  // action embedding dim; also the tag and position table dim
  std::size_t d_unit = 8;
  std::size_t d_adv = 8;
  std::size_t d_cat = 4;
  std::size_t d_rep = 4;  // per-indicator report embedding dim
  std::size_t d_in = 24;  // projected day vector fed to the first Bi-GRU
  std::size_t h1 = 18;
  std::size_t h2 = 10;
  std::size_t query_hidden = 32;
  bool positional = true;
  std::size_t mlp_hidden1 = 64;
  std::size_t mlp_hidden2 = 32;

  // Vocabulary sizes including the OOV row.
  std::size_t n_unit = 1;
  std::size_t n_adv = 1;
  std::size_t n_cat = 1;
  std::size_t n_tag = 1;
  std::size_t n_pos = 1;

  std::size_t id_dim() const { return d_unit + d_adv + d_cat; }
  std::size_t report_dim() const { return n_I * d_rep; }
  std::size_t ultimate_dim() const { return 2 * n_e; }
  std::size_t day_dim() const { return 2 * n_e + report_dim() + ultimate_dim() + id_dim(); }

  /// Throws std::invalid_argument; requires h2 == n_I + 1.
  void validate() const;
  void set_vocab_sizes(const data::Vocabularies& v);

  /// The small configuration used for gradient checks.
  static DspnConfig tiny();
};

enum class ModelKind { Dspn, Mlp };

struct Model {
  ModelKind kind = ModelKind::Dspn;
  DspnConfig config;
  ParameterSet params;
};

/// Scaled-uniform weights, zero biases, +-0.05 embeddings.
Model make_dspn(const DspnConfig& config, std::uint64_t seed);
Model make_mlp(const DspnConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Encoded inputs

/// One group of action slots as vocabulary ids and normalized deltas.
struct EncodedActions {
  std::vector<std::size_t> target;
  std::vector<std::size_t> kind;
  std::vector<double> value;
  std::vector<double> mask;
};

struct EncodedDay {
  std::vector<double> report;  // n_I normalized indicators
  std::vector<std::pair<std::size_t, double>> ult_tags;
  std::vector<std::pair<std::size_t, double>> ult_pos;
  EncodedActions tags;
  EncodedActions pos;
};

struct EncodedSample {
  std::size_t unit = 0;
  std::size_t adv = 0;
  std::size_t cat = 0;
  std::vector<EncodedDay> days;
  int label = 0;
};

/// Maps ids through the vocabularies and takes action values as new - old.
/// The sample must already be normalized.
EncodedSample encode(const data::Sample& normalized, const data::Vocabularies& vocab);

/// l x (n_I + 1) matrix of reports augmented with a constant-1 column.
Tensor augmented_reports(const EncodedSample& s);

// ---------------------------------------------------------------------------
// Building blocks

/// v * m_id as a 1 x d row; ids outside the table fall back to row 0.
Var embed_valued(Tape& tape, Parameter& table, std::size_t id, double v);

/// softmax(V Q^T / sqrt(n_a)) V with masked key columns excluded.
Var action_fusion(Var V, Var Q, std::span<const double> mask);

struct GruParams {
  Parameter* W_r;
  Parameter* U_r;
  Parameter* b_r;
  Parameter* W_z;
  Parameter* U_z;
  Parameter* b_z;
  Parameter* W_h;
  Parameter* U_h;
  Parameter* b_h;
};

/// Adds the nine tensors of one GRU under `prefix`.
GruParams add_gru(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng);
GruParams find_gru(ParameterSet& ps, const std::string& prefix);

/// One step; `s_prev` is 1 x hidden, `e` is 1 x in.
Var gru_cell(Var e, Var s_prev, const GruParams& p);

/// Rows are [forward_t, backward_t] for each step of the l x in input.
Var bigru_layer(Var inputs, const GruParams& fwd, const GruParams& bwd);

/// p = mean_i sigmoid(w . row_i) for a 1 x (n_I+1) w and l x (n_I+1) reports.
Var satisfaction_head(Var w, Var reports);

/// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
Var bce_loss(Var p, int label);

struct DspnOutput {
  Var p;
  Var w;
};

/// Requires model.kind == Dspn.
Var intent_vector(Tape& tape, Model& model, const EncodedSample& s);
DspnOutput dspn_forward(Tape& tape, Model& model, const EncodedSample& s);
/// Requires model.kind == Mlp.
Var mlp_baseline_forward(Tape& tape, Model& model, const EncodedSample& s);

/// Satisfaction probability for either model kind.
Var forward(Tape& tape, Model& model, const EncodedSample& s);

// ---------------------------------------------------------------------------
// Checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "DSPN", u32 version, u64 header length, JSON header, little-endian f64 payload.
void save_checkpoint(std::ostream& out, const Model& model);
Model load_checkpoint(std::istream& in);

std::string config_to_json(const DspnConfig& c);
DspnConfig config_from_json(const std::string& text);

}  // namespace dspn::model
