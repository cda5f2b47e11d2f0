#pragma once

// Small decoder-only transformer with learned absolute positions, pre-norm
// blocks and optional LoRA adapters on the attention projections.

#include <string>
#include <vector>

#include "omg/nn.hpp"
#include "omg/projectors.hpp"
#include "omg/vocab.hpp"

namespace omg::lm {

struct LlmConfig {
  std::size_t vocab = 0;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 256;
  std::size_t max_seq = 256;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;

  double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }
};

enum class SlotKind : std::uint8_t { Text, Pixel, Object, Region };

// Mixed sequence of token ids and injected embeddings. Injected slots carry
// id -1 and take their rows from `injected` in slot order.
template <class T>
struct TokenSequence {
  std::vector<int> ids;
  std::vector<SlotKind> kinds;
  Tensor<T> injected;               // [n_injected, D]; undefined when none
  std::size_t answer_begin = 0;     // first answer position; equals size() for prompts

  std::size_t size() const { return ids.size(); }
  std::size_t injected_count() const { return injected.defined() ? injected.dim(0) : 0; }

  void push_text(int id) {
    ids.push_back(id);
    kinds.push_back(SlotKind::Text);
  }

  // Index of the first slot of the given kind, or size() if absent.
  std::size_t first_of(SlotKind k) const {
    for (std::size_t i = 0; i < kinds.size(); ++i)
      if (kinds[i] == k) return i;
    return kinds.size();
  }

  std::vector<std::size_t> positions_of(int id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) out.push_back(i);
    return out;
  }
};

template <class T>
struct LlmOutput {
  std::vector<Tensor<T>> states;  // per block output [L, D], before the final norm
  Tensor<T> logits;              // [L, V]

  const Tensor<T>& last() const { return states.back(); }
};

// Low-rank delta on one [d_in, d_out] projection: x -> scale * (x A^T) B^T.
template <class T>
struct LoraAdapter {
  ParamPtr<T> a, b;  // A [r, d_in], B [d_out, r]
  T scale = T{1};

  LoraAdapter() = default;
  LoraAdapter(ParamStore<T>& store, const std::string& name, std::size_t d_in, std::size_t d_out, std::size_t rank,
              T s, Rng& rng)
      : scale(s) {
    if (rank == 0) throw ConfigError("lora: rank must be positive");
    a = store.add(name + ".A", init::fan_in_uniform<T>({rank, d_in}, d_in, rng));
    b = store.add(name + ".B", Tensor<T>::zeros({d_out, rank}));
  }

  std::size_t rank() const { return a->value.dim(0); }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    return scale_tensor(matmul_nt(matmul_nt(x, use(tape, a)), use(tape, b)));
  }

  // W [d_in, d_out] + scale * (B A)^T
  Tensor<T> merged(const Tensor<T>& w) const {
    const auto& A = a->value;
    const auto& B = b->value;
    const std::size_t r = A.dim(0), din = A.dim(1), dout = B.dim(0);
    if (B.dim(1) != r || w.rank() != 2 || w.dim(0) != din || w.dim(1) != dout)
      throw DimensionError("lora merge: W " + shape_str(w.shape()) + ", A " + shape_str(A.shape()) + ", B " +
                           shape_str(B.shape()));
    std::vector<T> out(w.data().begin(), w.data().end());
    for (std::size_t i = 0; i < din; ++i)
      for (std::size_t o = 0; o < dout; ++o) {
        T acc{0};
        for (std::size_t k = 0; k < r; ++k) acc += A.at(k, i) * B.at(o, k);
        out[i * dout + o] += scale * acc;
      }
    return Tensor<T>(w.shape(), std::move(out));
  }

 private:
  Tensor<T> scale_tensor(const Tensor<T>& t) const { return omg::scale(t, scale); }
};

template <class T>
class ToyLlm {
 public:
  ToyLlm() = default;
  ToyLlm(ParamStore<T>& store, LlmConfig cfg, Rng& rng, bool with_lora = true) : cfg_(cfg) {
    if (cfg_.vocab == 0) throw ConfigError("llm: vocabulary size must be set");
    if (cfg_.heads == 0 || cfg_.dim % cfg_.heads) throw ConfigError("llm: dim must be divisible by heads");
    const auto D = cfg_.dim;
    tok_emb_ = store.add("llm.tok_emb", init::normal<T>({cfg_.vocab, D}, 0.5, rng));
    pos_emb_ = store.add("llm.pos_emb", init::normal<T>({cfg_.max_seq, D}, 0.1, rng));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string n = "llm.block" + std::to_string(l);
      Block b;
      b.ln1 = LayerNorm<T>(store, n + ".ln1", D);
      b.q = Linear<T>(store, n + ".attn.q", D, D, rng);
      b.k = Linear<T>(store, n + ".attn.k", D, D, rng);
      b.v = Linear<T>(store, n + ".attn.v", D, D, rng);
      b.o = Linear<T>(store, n + ".attn.o", D, D, rng);
      b.ln2 = LayerNorm<T>(store, n + ".ln2", D);
      b.ffn = Mlp<T>(store, n + ".ffn", D, cfg_.ffn_hidden, D, rng);
      blocks_.push_back(std::move(b));
    }
    ln_f_ = LayerNorm<T>(store, "llm.ln_f", D);
    head_ = Linear<T>(store, "llm.lm_head", D, cfg_.vocab, rng, false);
    if (with_lora) attach_lora(store, rng);
  }

  const LlmConfig& config() const { return cfg_; }
  bool has_lora() const { return !blocks_.empty() && blocks_[0].lora[0].a != nullptr; }

  void attach_lora(ParamStore<T>& store, Rng& rng) {
    if (has_lora()) throw ContractError("llm: adapters already attached");
    const T s = static_cast<T>(cfg_.lora_scale());
    const char* names[4] = {"q", "k", "v", "o"};
    for (std::size_t l = 0; l < blocks_.size(); ++l)
      for (int j = 0; j < 4; ++j)
        blocks_[l].lora[j] = LoraAdapter<T>(store, "lora.block" + std::to_string(l) + "." + names[j], cfg_.dim,
                                            cfg_.dim, cfg_.lora_rank, s, rng);
  }

  // Token rows for the text slots and injected rows for the rest, in slot order.
  Tensor<T> embed(Tape<T>& tape, const TokenSequence<T>& seq) const {
    const std::size_t L = seq.size();
    if (L == 0) throw ContractError("llm: empty sequence");
    if (L > cfg_.max_seq)
      throw ContractError("llm: sequence length " + std::to_string(L) + " exceeds max_seq " +
                          std::to_string(cfg_.max_seq));
    std::vector<int> text_ids;
    std::vector<int> perm(L);
    std::size_t n_inj = 0;
    for (std::size_t i = 0; i < L; ++i)
      if (seq.ids[i] < 0) ++n_inj;
    if (n_inj != seq.injected_count())
      throw ContractError("llm: " + std::to_string(n_inj) + " injected slots but " +
                          std::to_string(seq.injected_count()) + " injected rows");
    std::size_t inj = 0;
    for (std::size_t i = 0; i < L; ++i) {
      if (seq.ids[i] >= 0) {
        perm[i] = static_cast<int>(text_ids.size());
        text_ids.push_back(seq.ids[i]);
      } else {
        perm[i] = -1 - static_cast<int>(inj++);
      }
    }
    for (auto& p : perm) p = p >= 0 ? p : static_cast<int>(text_ids.size()) + (-1 - p);
    std::vector<Tensor<T>> parts;
    if (!text_ids.empty()) parts.push_back(embedding_lookup(use(tape, tok_emb_), text_ids));
    if (n_inj) {
      if (seq.injected.dim(1) != cfg_.dim)
        throw DimensionError("llm: injected rows " + shape_str(seq.injected.shape()) + " for width " +
                             std::to_string(cfg_.dim));
      parts.push_back(seq.injected);
    }
    auto rows = parts.size() == 1 ? parts[0] : concat(parts, 0);
    auto x = n_inj && !text_ids.empty() ? index_rows(rows, perm) : rows;
    return add(x, slice(use(tape, pos_emb_), 0, 0, L));
  }

  LlmOutput<T> forward(Tape<T>& tape, const TokenSequence<T>& seq, bool use_lora = true) const {
    LlmOutput<T> out;
    auto x = embed(tape, seq);
    const bool lora = use_lora && has_lora();
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& b = blocks_[l];
      auto proj = [&](const Linear<T>& lin, int j, const Tensor<T>& in) {
        auto y = lin(tape, in);
        return lora ? add(y, b.lora[j](tape, in)) : y;
      };
      auto h = b.ln1(tape, x);
      auto att = attention(proj(b.q, 0, h), proj(b.k, 1, h), proj(b.v, 2, h), cfg_.heads, AttendMask{{}, true});
      x = add(x, proj(b.o, 3, att));
      x = add(x, b.ffn(tape, b.ln2(tape, x)));
      out.states.push_back(x);
    }
    out.logits = head_(tape, ln_f_(tape, x));
    return out;
  }

  // Copy of the base weights into `dst` with every adapter folded in.
  ToyLlm merged_into(ParamStore<T>& dst, const ParamStore<T>& src) const {
    Rng rng(0);
    ToyLlm m(dst, cfg_, rng, false);
    for (const auto& p : dst.all()) {
      auto s = src.find(p->name);
      if (!s) throw ContractError("lora merge: missing base parameter " + p->name);
      p->value = s->value.detach();
    }
    if (has_lora()) {
      for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Linear<T>* srcs[4] = {&blocks_[l].q, &blocks_[l].k, &blocks_[l].v, &blocks_[l].o};
        Linear<T>* dsts[4] = {&m.blocks_[l].q, &m.blocks_[l].k, &m.blocks_[l].v, &m.blocks_[l].o};
        for (int j = 0; j < 4; ++j) dsts[j]->weight->value = blocks_[l].lora[j].merged(srcs[j]->weight->value);
      }
    }
    return m;
  }

  const LoraAdapter<T>& adapter(std::size_t layer, int proj) const { return blocks_.at(layer).lora[proj]; }

 private:
  struct Block {
    LayerNorm<T> ln1, ln2;
    Linear<T> q, k, v, o;
    Mlp<T> ffn;
    LoraAdapter<T> lora[4];
  };

  LlmConfig cfg_;
  ParamPtr<T> tok_emb_, pos_emb_;
  std::vector<Block> blocks_;
  LayerNorm<T> ln_f_;
  Linear<T> head_;
};

template <class T>
struct Generation {
  std::vector<int> tokens;              // emitted ids, EOS excluded
  std::vector<std::size_t> seg_positions;  // absolute positions of emitted [SEG] tokens
  bool hit_eos = false;
  TokenSequence<T> sequence;            // prefix plus emitted tokens
};

template <class T>
Generation<T> generate(const ToyLlm<T>& llm, const Vocab& vocab, const TokenSequence<T>& prefix, std::size_t max_new,
                       bool use_lora = true) {
  Generation<T> g;
  g.sequence = prefix;
  for (std::size_t step = 0; step < max_new && g.sequence.size() < llm.config().max_seq; ++step) {
    Tape<T> tape(false);
    auto out = llm.forward(tape, g.sequence, use_lora);
    const auto V = out.logits.dim(1), last = out.logits.dim(0) - 1;
    int best = 0;
    for (std::size_t v = 1; v < V; ++v)
      if (out.logits.at(last, v) > out.logits.at(last, static_cast<std::size_t>(best))) best = static_cast<int>(v);
    if (best == vocab.eos) {
      g.hit_eos = true;
      break;
    }
    if (best == vocab.seg) g.seg_positions.push_back(g.sequence.size());
    g.sequence.push_text(best);
    g.tokens.push_back(best);
  }
  return g;
}

// Hidden state feeding the text projector for the token at `pos`.
template <class T>
Tensor<T> seg_hidden(const LlmOutput<T>& out, std::size_t pos, SegSource source) {
  const std::size_t L = out.last().dim(0);
  if (pos >= L) throw ContractError("seg_hidden: position " + std::to_string(pos) + " outside sequence of " +
                                    std::to_string(L));
  switch (source) {
    case SegSource::Last: return slice(out.last(), 0, pos, pos + 1);
    case SegSource::Mean: {
      Tensor<T> acc = slice(out.states[0], 0, pos, pos + 1);
      for (std::size_t l = 1; l < out.states.size(); ++l) acc = add(acc, slice(out.states[l], 0, pos, pos + 1));
      return scale(acc, T{1} / static_cast<T>(out.states.size()));
    }
    case SegSource::Concat: {
      std::vector<Tensor<T>> rows;
      for (const auto& s : out.states) rows.push_back(slice(s, 0, pos, pos + 1));
      return concat(rows, 1);
    }
  }
  return {};
}

// Lays out BOS, the prompt with <Image> expanded to `visual` rows and each
// <Region> replaced by one `regions` row, then the answer and EOS. A prompt
// without answer produces a generation prefix.
template <class T>
TokenSequence<T> build_instruction(const Vocab& vocab, const std::vector<int>& prompt, const Tensor<T>& visual,
                                   std::size_t pixel_count, const Tensor<T>& regions, const std::vector<int>& answer,
                                   std::size_t max_seq, bool with_eos = true) {
  TokenSequence<T> seq;
  std::vector<int> inj_rows;  // source row in concat(visual, regions)
  const std::size_t n_visual = visual.defined() ? visual.dim(0) : 0;
  const std::size_t n_regions = regions.defined() ? regions.dim(0) : 0;
  if (pixel_count > n_visual) throw AssemblyError("instruction: pixel count exceeds visual rows");
  std::size_t images = 0, region_used = 0;
  seq.push_text(vocab.bos);
  for (int t : prompt) {
    if (t == vocab.image) {
      if (++images > 1) throw AssemblyError("instruction: more than one <Image> placeholder");
      if (n_visual == 0) throw AssemblyError("instruction: <Image> placeholder without visual tokens");
      for (std::size_t r = 0; r < n_visual; ++r) {
        seq.ids.push_back(-1);
        seq.kinds.push_back(r < pixel_count ? SlotKind::Pixel : SlotKind::Object);
        inj_rows.push_back(static_cast<int>(r));
      }
    } else if (t == vocab.region) {
      if (region_used >= n_regions) throw AssemblyError("instruction: <Region> slot without a bound prompt embedding");
      seq.ids.push_back(-1);
      seq.kinds.push_back(SlotKind::Region);
      inj_rows.push_back(static_cast<int>(n_visual + region_used++));
    } else {
      seq.push_text(t);
    }
  }
  if (region_used != n_regions)
    throw AssemblyError("instruction: " + std::to_string(n_regions) + " prompt embeddings but " +
                        std::to_string(region_used) + " <Region> slots");
  seq.answer_begin = seq.size();
  for (int t : answer) seq.push_text(t);
  if (with_eos && !answer.empty()) seq.push_text(vocab.eos);
  if (seq.size() > max_seq)
    throw AssemblyError("instruction: sequence of " + std::to_string(seq.size()) + " tokens exceeds max_seq " +
                        std::to_string(max_seq));
  if (!inj_rows.empty()) {
    std::vector<Tensor<T>> parts;
    if (n_visual) parts.push_back(visual);
    if (n_regions) parts.push_back(regions);
    auto all = parts.size() == 1 ? parts[0] : concat(parts, 0);
    bool identity = inj_rows.size() == all.dim(0);
    for (std::size_t i = 0; identity && i < inj_rows.size(); ++i) identity = inj_rows[i] == static_cast<int>(i);
    seq.injected = identity ? all : index_rows(all, inj_rows);
  }
  return seq;
}

// Next-token targets: position t predicts slot t+1 for every answer slot.
template <class T>
void answer_targets(const TokenSequence<T>& seq, std::vector<int>& targets, std::vector<std::uint8_t>& supervise) {
  const std::size_t L = seq.size();
  targets.assign(L, 0);
  supervise.assign(L, 0);
  for (std::size_t t = 0; t + 1 < L; ++t) {
    if (t + 1 >= seq.answer_begin && seq.ids[t + 1] >= 0) {
      targets[t] = seq.ids[t + 1];
      supervise[t] = 1;
    }
  }
}

}  // namespace omg::lm
