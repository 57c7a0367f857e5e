#include "dspn/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace dspn::model {

using nlohmann::json;
using nd::Shape;

void DspnConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("dspn config: " + m); };
  if (n_I == 0 || l == 0 || n_a == 0 || n_e == 0) fail("n_I, l, n_a, n_e must be >= 1");
  if (d_unit == 0 || d_adv == 0 || d_cat == 0 || d_rep == 0 || d_in == 0) fail("embedding dims must be >= 1");
  if (h1 == 0 || query_hidden == 0 || mlp_hidden1 == 0 || mlp_hidden2 == 0) fail("hidden sizes must be >= 1");
  if (h2 != n_I + 1) fail("h2 must equal n_I + 1 (got h2=" + std::to_string(h2) + ", n_I=" + std::to_string(n_I) + ")");
  if (n_unit == 0 || n_adv == 0 || n_cat == 0 || n_tag == 0 || n_pos == 0) fail("vocabulary sizes must be >= 1");
}

void DspnConfig::set_vocab_sizes(const data::Vocabularies& v) {
  n_unit = v.unit.size();
  n_adv = v.advertiser.size();
  n_cat = v.category.size();
  n_tag = v.tag.size();
  n_pos = v.position.size();
}

DspnConfig DspnConfig::tiny() {
  DspnConfig c;
  c.n_I = 3;
  c.l = 3;
  c.n_a = 2;
  c.n_e = 3;
  c.d_unit = 2;
  c.d_adv = 2;
  c.d_cat = 2;
  c.d_rep = 2;
  c.d_in = 4;
  c.h1 = 4;
  c.h2 = 4;
  c.query_hidden = 4;
  c.mlp_hidden1 = 6;
  c.mlp_hidden2 = 4;
  c.n_unit = c.n_adv = c.n_cat = c.n_tag = c.n_pos = 4;
  return c;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

enum class Init { Glorot, Zero, Embedding };

void add_param(ParameterSet& ps, Rng& rng, const std::string& name, std::size_t r, std::size_t c, Init init) {
  std::vector<double> v(r * c, 0.0);
  const double bound = init == Init::Glorot ? std::sqrt(6.0 / static_cast<double>(r + c)) : 0.05;
  if (init != Init::Zero)
    for (double& x : v) x = rng.uniform(-bound, bound);
  ps.add(name, Tensor(Shape::matrix(r, c), std::move(v)));
}

void add_embeddings(ParameterSet& ps, Rng& rng, const DspnConfig& c) {
  add_param(ps, rng, "emb.unit", c.n_unit, c.d_unit, Init::Embedding);
  add_param(ps, rng, "emb.adv", c.n_adv, c.d_adv, Init::Embedding);
  add_param(ps, rng, "emb.cat", c.n_cat, c.d_cat, Init::Embedding);
  add_param(ps, rng, "emb.tag", c.n_tag, c.n_e, Init::Embedding);
  add_param(ps, rng, "emb.pos", c.n_pos, c.n_e, Init::Embedding);
  add_param(ps, rng, "emb.kind", kActionKindCount, c.n_e, Init::Embedding);
  add_param(ps, rng, "emb.report", c.n_I, c.d_rep, Init::Embedding);
}

void add_gru_params(ParameterSet& ps, Rng& rng, const std::string& prefix, std::size_t in, std::size_t h) {
  for (const char* gate : {"r", "z", "h"}) {
    add_param(ps, rng, prefix + ".W_" + gate, in, h, Init::Glorot);
    add_param(ps, rng, prefix + ".U_" + gate, h, h, Init::Glorot);
    add_param(ps, rng, prefix + ".b_" + gate, 1, h, Init::Zero);
  }
}

}  // namespace

GruParams add_gru(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
  add_gru_params(ps, rng, prefix, in, hidden);
  return find_gru(ps, prefix);
}

GruParams find_gru(ParameterSet& ps, const std::string& prefix) {
  auto g = [&](const char* n) { return &ps.get(prefix + "." + n); };
  return {g("W_r"), g("U_r"), g("b_r"), g("W_z"), g("U_z"), g("b_z"), g("W_h"), g("U_h"), g("b_h")};
}

Model make_dspn(const DspnConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.kind = ModelKind::Dspn;
  m.config = config;
  Rng rng(mix_seed(seed, 0xD5));
  ParameterSet& ps = m.params;
  const DspnConfig& c = config;
  add_embeddings(ps, rng, c);
  const std::size_t q_in = c.id_dim() + c.report_dim() + c.ultimate_dim();
  add_param(ps, rng, "query.W1", q_in, c.query_hidden, Init::Glorot);
  add_param(ps, rng, "query.b1", 1, c.query_hidden, Init::Zero);
  for (const char* g : {"tag", "pos"}) {
    add_param(ps, rng, std::string("query.W_") + g, c.query_hidden, c.n_a * c.n_e, Init::Glorot);
    add_param(ps, rng, std::string("query.b_") + g, 1, c.n_a * c.n_e, Init::Zero);
  }
  add_param(ps, rng, "proj.W", c.day_dim(), c.d_in, Init::Glorot);
  add_param(ps, rng, "proj.b", 1, c.d_in, Init::Zero);
  if (c.positional) add_param(ps, rng, "proj.pos", c.l, c.d_in, Init::Embedding);
  add_gru_params(ps, rng, "gru1.fwd", c.d_in, c.h1);
  add_gru_params(ps, rng, "gru1.bwd", c.d_in, c.h1);
  add_gru_params(ps, rng, "gru2.fwd", 2 * c.h1, c.h2);
  add_gru_params(ps, rng, "gru2.bwd", 2 * c.h1, c.h2);
  return m;
}

Model make_mlp(const DspnConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.kind = ModelKind::Mlp;
  m.config = config;
  Rng rng(mix_seed(seed, 0x3B));
  ParameterSet& ps = m.params;
  const DspnConfig& c = config;
  add_embeddings(ps, rng, c);
  const std::size_t in = c.l * (c.report_dim() + c.ultimate_dim() + 2 * c.n_e) + c.id_dim();
  add_param(ps, rng, "mlp.W1", in, c.mlp_hidden1, Init::Glorot);
  add_param(ps, rng, "mlp.b1", 1, c.mlp_hidden1, Init::Zero);
  add_param(ps, rng, "mlp.W2", c.mlp_hidden1, c.mlp_hidden2, Init::Glorot);
  add_param(ps, rng, "mlp.b2", 1, c.mlp_hidden2, Init::Zero);
  add_param(ps, rng, "mlp.W3", c.mlp_hidden2, 1, Init::Glorot);
  add_param(ps, rng, "mlp.b3", 1, 1, Init::Zero);
  return m;
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

EncodedActions encode_actions(const data::ActionSlots& slots, const data::Vocab& vocab) {
  EncodedActions a;
  const std::size_t n = slots.events.size();
  a.target.assign(n, 0);
  a.kind.assign(n, 0);
  a.value.assign(n, 0.0);
  a.mask.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!slots.mask[i]) continue;
    const ActionEvent& e = slots.events[i];
    a.target[i] = static_cast<std::size_t>(vocab.lookup(e.target));
    a.kind[i] = static_cast<std::size_t>(e.kind);
    a.value[i] = e.delta();
    a.mask[i] = 1.0;
  }
  return a;
}

std::vector<std::pair<std::size_t, double>> encode_ultimate(const std::vector<std::pair<int, double>>& v,
                                                            const data::Vocab& vocab) {
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(v.size());
  for (const auto& [id, x] : v) out.emplace_back(static_cast<std::size_t>(vocab.lookup(id)), x);
  return out;
}

}  // namespace

EncodedSample encode(const data::Sample& s, const data::Vocabularies& vocab) {
  EncodedSample e;
  e.unit = static_cast<std::size_t>(vocab.unit.lookup(s.unit_id));
  e.adv = static_cast<std::size_t>(vocab.advertiser.lookup(s.advertiser_id));
  e.cat = static_cast<std::size_t>(vocab.category.lookup(s.category_id));
  e.label = s.label;
  e.days.reserve(s.days.size());
  for (const data::SampleDay& d : s.days) {
    EncodedDay day;
    day.report = d.report.indicators;
    day.ult_tags = encode_ultimate(d.ultimate.tags, vocab.tag);
    day.ult_pos = encode_ultimate(d.ultimate.positions, vocab.position);
    day.tags = encode_actions(d.tag_actions, vocab.tag);
    day.pos = encode_actions(d.pos_actions, vocab.position);
    e.days.push_back(std::move(day));
  }
  return e;
}

Tensor augmented_reports(const EncodedSample& s) {
  if (s.days.empty()) throw std::invalid_argument("augmented_reports: sample has no days");
  const std::size_t n = s.days.front().report.size() + 1;
  std::vector<double> v;
  v.reserve(s.days.size() * n);
  for (const EncodedDay& d : s.days) {
    if (d.report.size() + 1 != n) throw nd::DimensionError("augmented_reports: ragged report lengths");
    v.insert(v.end(), d.report.begin(), d.report.end());
    v.push_back(1.0);
  }
  return Tensor(Shape::matrix(s.days.size(), n), std::move(v));
}

// ---------------------------------------------------------------------------
// Building blocks

Var embed_valued(Tape& tape, Parameter& table, std::size_t id, double v) {
  if (id >= table.value.rows()) id = 0;
  const std::size_t ids[1] = {id};
  Var row = nd::gather_rows(tape.param(table), ids);
  return v == 1.0 ? row : nd::scale(row, v);
}

Var action_fusion(Var V, Var Q, std::span<const double> mask) {
  if (!(V.shape() == Q.shape()))
    throw nd::DimensionError("action_fusion: V " + V.shape().str() + " vs Q " + Q.shape().str());
  const std::size_t n_a = V.value().rows();
  if (mask.size() != n_a) throw nd::DimensionError("action_fusion: mask length differs from n_a");
  Var scores = nd::scale(nd::matmul(V, nd::transpose(Q)), 1.0 / std::sqrt(static_cast<double>(n_a)));
  return nd::matmul(nd::masked_softmax_rows(scores, mask), V);
}

namespace {

Var ones_column(Tape& tape, std::size_t n) { return tape.constant(Tensor::full(Shape::matrix(n, 1), 1.0)); }

// x W + b for an r x in input, bias broadcast over rows.
Var affine(Tape& tape, Var x, Parameter& W, Parameter& b) {
  Var xw = nd::matmul(x, tape.param(W));
  const std::size_t r = x.value().rows();
  Var bias = tape.param(b);
  return nd::add(xw, r == 1 ? bias : nd::matmul(ones_column(tape, r), bias));
}

// One GRU step from precomputed input terms a_* = e W_* + b_*.
Var gru_step(Var a_r, Var a_z, Var a_h, Var s, const GruParams& p) {
  Tape& tape = *a_r.tape;
  Var r = nd::sigmoid(nd::add(a_r, nd::matmul(s, tape.param(*p.U_r))));
  Var z = nd::sigmoid(nd::add(a_z, nd::matmul(s, tape.param(*p.U_z))));
  Var h = nd::tanh(nd::add(a_h, nd::matmul(nd::mul(r, s), tape.param(*p.U_h))));
  Var one_minus_z = nd::shift(nd::scale(z, -1.0), 1.0);
  return nd::add(nd::mul(z, s), nd::mul(one_minus_z, h));
}

struct Directions {
  std::vector<Var> fwd;
  std::vector<Var> bwd;  // indexed by day, not by step
};

Var run_direction(Tape& tape, Var inputs, const GruParams& p, bool reverse, std::vector<Var>& out) {
  const std::size_t l = inputs.value().rows();
  Var A_r = affine(tape, inputs, *p.W_r, *p.b_r);
  Var A_z = affine(tape, inputs, *p.W_z, *p.b_z);
  Var A_h = affine(tape, inputs, *p.W_h, *p.b_h);
  const std::size_t h = p.U_r->value.rows();
  Var s = tape.constant(Tensor::zeros(Shape::matrix(1, h)));
  out.assign(l, s);
  for (std::size_t k = 0; k < l; ++k) {
    const std::size_t t = reverse ? l - 1 - k : k;
    s = gru_step(nd::slice_row(A_r, t), nd::slice_row(A_z, t), nd::slice_row(A_h, t), s, p);
    out[t] = s;
  }
  return s;
}

Directions bigru(Var inputs, const GruParams& fwd, const GruParams& bwd) {
  if (inputs.value().rows() == 0) throw std::invalid_argument("bigru_layer: empty sequence");
  Tape& tape = *inputs.tape;
  Directions d;
  run_direction(tape, inputs, fwd, false, d.fwd);
  run_direction(tape, inputs, bwd, true, d.bwd);
  return d;
}

Var stack(const Directions& d) {
  std::vector<Var> rows;
  rows.reserve(d.fwd.size());
  for (std::size_t t = 0; t < d.fwd.size(); ++t) {
    const Var pair[2] = {d.fwd[t], d.bwd[t]};
    rows.push_back(nd::concat_cols(pair));
  }
  return nd::concat_rows(rows);
}

}  // namespace

Var gru_cell(Var e, Var s_prev, const GruParams& p) {
  Tape& tape = *e.tape;
  auto term = [&](Parameter* W, Parameter* b) { return nd::add(nd::matmul(e, tape.param(*W)), tape.param(*b)); };
  return gru_step(term(p.W_r, p.b_r), term(p.W_z, p.b_z), term(p.W_h, p.b_h), s_prev, p);
}

Var bigru_layer(Var inputs, const GruParams& fwd, const GruParams& bwd) { return stack(bigru(inputs, fwd, bwd)); }

Var satisfaction_head(Var w, Var reports) {
  return nd::mean(nd::sigmoid(nd::matmul(reports, nd::transpose(w))));
}

Var bce_loss(Var p, int label) {
  Var pc = nd::clamp(p, 1e-7, 1.0 - 1e-7);
  if (label == 1) return nd::scale(nd::log(pc), -1.0);
  return nd::scale(nd::log(nd::shift(nd::scale(pc, -1.0), 1.0)), -1.0);
}

// ---------------------------------------------------------------------------
// Day features shared by both models

namespace {

struct Tables {
  Parameter* unit;
  Parameter* adv;
  Parameter* cat;
  Parameter* tag;
  Parameter* pos;
  Parameter* kind;
  Parameter* report;
};

Tables tables(ParameterSet& ps) {
  return {&ps.get("emb.unit"), &ps.get("emb.adv"), &ps.get("emb.cat"),   &ps.get("emb.tag"),
          &ps.get("emb.pos"),  &ps.get("emb.kind"), &ps.get("emb.report")};
}

void check_sample(const DspnConfig& c, const EncodedSample& s) {
  if (s.days.size() != c.l)
    throw nd::DimensionError("sample has " + std::to_string(s.days.size()) + " days, model expects l=" +
                             std::to_string(c.l));
  for (const EncodedDay& d : s.days) {
    if (d.report.size() != c.n_I)
      throw nd::DimensionError("sample report has " + std::to_string(d.report.size()) +
                               " indicators, model expects n_I=" + std::to_string(c.n_I));
    if (d.tags.mask.size() != c.n_a || d.pos.mask.size() != c.n_a)
      throw nd::DimensionError("sample action groups must have n_a=" + std::to_string(c.n_a) + " slots");
  }
}

Var id_embedding(Tape& tape, const Tables& t, const EncodedSample& s) {
  const Var parts[3] = {embed_valued(tape, *t.unit, s.unit, 1.0), embed_valued(tape, *t.adv, s.adv, 1.0),
                        embed_valued(tape, *t.cat, s.cat, 1.0)};
  return nd::concat_cols(parts);
}

// Flattened diag(report) * R: row j of the per-indicator table scaled by indicator j.
Var report_embedding(Tape& tape, const Tables& t, const std::vector<double>& report, std::size_t d_rep) {
  std::vector<double> v;
  v.reserve(report.size() * d_rep);
  for (double x : report) v.insert(v.end(), d_rep, x);
  Var scaled = nd::mul(tape.constant(Tensor(Shape::matrix(report.size(), d_rep), std::move(v))), tape.param(*t.report));
  return nd::reshape(scaled, Shape::matrix(1, report.size() * d_rep));
}

// Mean of v * m_id over the active entries; zeros when none are active.
Var pooled_values(Tape& tape, Parameter& table, const std::vector<std::pair<std::size_t, double>>& entries) {
  const std::size_t d = table.value.cols();
  if (entries.empty()) return tape.constant(Tensor::zeros(Shape::matrix(1, d)));
  std::vector<std::size_t> ids;
  std::vector<double> w;
  const double inv = 1.0 / static_cast<double>(entries.size());
  for (const auto& [id, x] : entries) {
    ids.push_back(id < table.value.rows() ? id : 0);
    w.push_back(x * inv);
  }
  Var rows = nd::gather_rows(tape.param(table), ids);
  return nd::matmul(tape.constant(Tensor::row(std::move(w))), rows);
}

Var ultimate_embedding(Tape& tape, const Tables& t, const EncodedDay& d) {
  const Var parts[2] = {pooled_values(tape, *t.tag, d.ult_tags), pooled_values(tape, *t.pos, d.ult_pos)};
  return nd::concat_cols(parts);
}

// V: n_a x n_e with row i = (delta_i * m_target + m_kind) for valid slots, 0 otherwise.
Var action_matrix(Tape& tape, Parameter& target_table, Parameter& kind_table, const EncodedActions& a) {
  const std::size_t n_a = a.mask.size();
  const std::size_t n_e = target_table.value.cols();
  std::vector<std::size_t> targets(n_a);
  std::vector<double> vals(n_a * n_e), mask(n_a * n_e);
  for (std::size_t i = 0; i < n_a; ++i) {
    targets[i] = a.target[i] < target_table.value.rows() ? a.target[i] : 0;
    std::fill_n(vals.begin() + static_cast<std::ptrdiff_t>(i * n_e), n_e, a.value[i] * a.mask[i]);
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(i * n_e), n_e, a.mask[i]);
  }
  const Shape sh = Shape::matrix(n_a, n_e);
  Var valued = nd::mul(nd::gather_rows(tape.param(target_table), targets), tape.constant(Tensor(sh, std::move(vals))));
  Var kinds = nd::mul(nd::gather_rows(tape.param(kind_table), a.kind), tape.constant(Tensor(sh, std::move(mask))));
  return nd::add(valued, kinds);
}

bool any_valid(const EncodedActions& a) {
  return std::any_of(a.mask.begin(), a.mask.end(), [](double m) { return m != 0.0; });
}

// 1 x n_a row that averages (or sums) the valid rows of a matrix.
Var pool_row(Tape& tape, const EncodedActions& a, bool average) {
  double count = 0.0;
  for (double m : a.mask) count += m;
  std::vector<double> w(a.mask);
  if (average && count > 0.0)
    for (double& x : w) x /= count;
  return tape.constant(Tensor::row(std::move(w)));
}

Var query(Tape& tape, ParameterSet& ps, Var hidden, const char* group, const DspnConfig& c) {
  Var q = affine(tape, hidden, ps.get(std::string("query.W_") + group), ps.get(std::string("query.b_") + group));
  return nd::reshape(q, Shape::matrix(c.n_a, c.n_e));
}

}  // namespace

Var intent_vector(Tape& tape, Model& model, const EncodedSample& s) {
  if (model.kind != ModelKind::Dspn) throw std::invalid_argument("intent_vector: model is not a DSPN");
  const DspnConfig& c = model.config;
  check_sample(c, s);
  ParameterSet& ps = model.params;
  const Tables t = tables(ps);
  const Var idv = id_embedding(tape, t, s);
  const Var zero_pool = tape.constant(Tensor::zeros(Shape::matrix(1, c.n_e)));

  std::vector<Var> day_rows;
  day_rows.reserve(c.l);
  for (const EncodedDay& d : s.days) {
    const Var rep = report_embedding(tape, t, d.report, c.d_rep);
    const Var ult = ultimate_embedding(tape, t, d);
    Var pooled[2] = {zero_pool, zero_pool};
    const bool has_tag = any_valid(d.tags), has_pos = any_valid(d.pos);
    if (has_tag || has_pos) {
      const Var q_in[3] = {idv, rep, ult};
      const Var hidden = nd::tanh(affine(tape, nd::concat_cols(q_in), ps.get("query.W1"), ps.get("query.b1")));
      const EncodedActions* groups[2] = {&d.tags, &d.pos};
      Parameter* target_tables[2] = {t.tag, t.pos};
      const char* names[2] = {"tag", "pos"};
      for (int g = 0; g < 2; ++g) {
        if (!(g == 0 ? has_tag : has_pos)) continue;
        const Var V = action_matrix(tape, *target_tables[g], *t.kind, *groups[g]);
        const Var fused = action_fusion(V, query(tape, ps, hidden, names[g], c), groups[g]->mask);
        pooled[g] = nd::matmul(pool_row(tape, *groups[g], true), fused);
      }
    }
    const Var parts[5] = {pooled[0], pooled[1], rep, ult, idv};
    day_rows.push_back(nd::concat_cols(parts));
  }

  Var pre = affine(tape, nd::concat_rows(day_rows), ps.get("proj.W"), ps.get("proj.b"));
  if (c.positional) pre = nd::add(pre, tape.param(ps.get("proj.pos")));
  const Var x = nd::tanh(pre);

  const Var layer1 = bigru_layer(x, find_gru(ps, "gru1.fwd"), find_gru(ps, "gru1.bwd"));
  const Directions layer2 = bigru(layer1, find_gru(ps, "gru2.fwd"), find_gru(ps, "gru2.bwd"));
  return nd::add(layer2.fwd.back(), layer2.bwd.back());
}

DspnOutput dspn_forward(Tape& tape, Model& model, const EncodedSample& s) {
  const Var w = intent_vector(tape, model, s);
  const Var p = satisfaction_head(w, tape.constant(augmented_reports(s)));
  return {p, w};
}

Var mlp_baseline_forward(Tape& tape, Model& model, const EncodedSample& s) {
  if (model.kind != ModelKind::Mlp) throw std::invalid_argument("mlp_baseline_forward: model is not an MLP");
  const DspnConfig& c = model.config;
  check_sample(c, s);
  ParameterSet& ps = model.params;
  const Tables t = tables(ps);
  std::vector<Var> parts;
  parts.reserve(4 * c.l + 1);
  for (const EncodedDay& d : s.days) {
    parts.push_back(report_embedding(tape, t, d.report, c.d_rep));
    parts.push_back(ultimate_embedding(tape, t, d));
    for (const auto& [group, table] : {std::pair{&d.tags, t.tag}, std::pair{&d.pos, t.pos}}) {
      if (!any_valid(*group)) {
        parts.push_back(tape.constant(Tensor::zeros(Shape::matrix(1, c.n_e))));
        continue;
      }
      parts.push_back(nd::matmul(pool_row(tape, *group, false), action_matrix(tape, *table, *t.kind, *group)));
    }
  }
  parts.push_back(id_embedding(tape, t, s));
  Var h = nd::tanh(affine(tape, nd::concat_cols(parts), ps.get("mlp.W1"), ps.get("mlp.b1")));
  h = nd::tanh(affine(tape, h, ps.get("mlp.W2"), ps.get("mlp.b2")));
  return nd::mean(nd::sigmoid(affine(tape, h, ps.get("mlp.W3"), ps.get("mlp.b3"))));
}

Var forward(Tape& tape, Model& model, const EncodedSample& s) {
  return model.kind == ModelKind::Dspn ? dspn_forward(tape, model, s).p : mlp_baseline_forward(tape, model, s);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'D', 'S', 'P', 'N'};

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw CheckpointError("checkpoint: truncated file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

json config_json(const DspnConfig& c) {
  return json{{"n_I", c.n_I},
              {"l", c.l},
              {"n_a", c.n_a},
              {"n_e", c.n_e},
              {"d_unit", c.d_unit},
              {"d_adv", c.d_adv},
              {"d_cat", c.d_cat},
              {"d_rep", c.d_rep},
              {"d_in", c.d_in},
              {"h1", c.h1},
              {"h2", c.h2},
              {"query_hidden", c.query_hidden},
              {"positional", c.positional},
              {"mlp_hidden1", c.mlp_hidden1},
              {"mlp_hidden2", c.mlp_hidden2},
              {"n_unit", c.n_unit},
              {"n_adv", c.n_adv},
              {"n_cat", c.n_cat},
              {"n_tag", c.n_tag},
              {"n_pos", c.n_pos}};
}

DspnConfig config_of(const json& j) {
  DspnConfig c;
  auto rd = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::remove_reference_t<decltype(field)>>();
  };
  rd("n_I", c.n_I);
  rd("l", c.l);
  rd("n_a", c.n_a);
  rd("n_e", c.n_e);
  rd("d_unit", c.d_unit);
  rd("d_adv", c.d_adv);
  rd("d_cat", c.d_cat);
  rd("d_rep", c.d_rep);
  rd("d_in", c.d_in);
  rd("h1", c.h1);
  c.h2 = c.n_I + 1;
  rd("h2", c.h2);
  rd("query_hidden", c.query_hidden);
  rd("positional", c.positional);
  rd("mlp_hidden1", c.mlp_hidden1);
  rd("mlp_hidden2", c.mlp_hidden2);
  rd("n_unit", c.n_unit);
  rd("n_adv", c.n_adv);
  rd("n_cat", c.n_cat);
  rd("n_tag", c.n_tag);
  rd("n_pos", c.n_pos);
  return c;
}

}  // namespace

std::string config_to_json(const DspnConfig& c) { return config_json(c).dump(2); }

DspnConfig config_from_json(const std::string& text) {
  try {
    DspnConfig c = config_of(json::parse(text));
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("dspn config: ") + e.what());
  }
}

void save_checkpoint(std::ostream& out, const Model& model) {
  json params = json::array();
  for (const Parameter& p : model.params) {
    json shape = json::array();
    for (std::size_t i = 0; i < p.value.shape().rank; ++i) shape.push_back(p.value.shape()[i]);
    params.push_back(json{{"name", p.name}, {"shape", shape}});
  }
  const std::string header = json{{"model", model.kind == ModelKind::Dspn ? "dspn" : "mlp"},
                                  {"config", config_json(model.config)},
                                  {"params", params}}
                                 .dump();
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const Parameter& p : model.params)
    for (double x : p.value.data()) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  if (!out) throw CheckpointError("checkpoint: write failed");
}

Model load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic");
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: version mismatch (file " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const auto len = read_le<std::uint64_t>(in);
  if (len > (1u << 26)) throw CheckpointError("checkpoint: header too large");
  std::string header(len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(len))) throw CheckpointError("checkpoint: truncated header");

  json h;
  try {
    h = json::parse(header);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }
  const std::string kind = h.value("model", "");
  if (kind != "dspn" && kind != "mlp") throw CheckpointError("checkpoint: unknown model kind '" + kind + "'");
  DspnConfig config;
  try {
    config = config_of(h.at("config"));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad config: ") + e.what());
  }
  Model m = kind == "dspn" ? make_dspn(config, 0) : make_mlp(config, 0);

  const json& listed = h.at("params");
  if (listed.size() != m.params.size()) throw CheckpointError("checkpoint: parameter count mismatch");
  std::size_t i = 0;
  for (Parameter& p : m.params) {
    const json& e = listed.at(i++);
    if (e.at("name").get<std::string>() != p.name)
      throw CheckpointError("checkpoint: expected parameter '" + p.name + "', found '" +
                            e.at("name").get<std::string>() + "'");
    const auto dims = e.at("shape").get<std::vector<std::size_t>>();
    std::size_t numel = 1;
    for (std::size_t d : dims) numel *= d;
    if (numel != p.value.numel()) throw CheckpointError("checkpoint: shape mismatch for '" + p.name + "'");
    for (double& x : p.value.mutable_data()) x = std::bit_cast<double>(read_le<std::uint64_t>(in));
  }
  return m;
}

}  // namespace dspn::model
