#pragma once

// Model checkpoints: a text manifest followed by named tensor blocks whose
// values are hex-encoded IEEE doubles, so a save/load round trip is exact.
//
//   TAGE-CKPT 1
//   KIND <encoder|head|explainer>
//   META <key> <value>
//   TENSOR <name> <rows> <cols>
//   <cols hex words per row>
//   END

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tage/encoder.hpp"
#include "tage/explainer.hpp"

namespace tage {

struct checkpoint_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string double_to_hex(double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(bits));
  return buf;
}

inline double hex_to_double(const std::string& s) {
  std::uint64_t bits = 0;
  if (s.size() != 16) throw checkpoint_error("checkpoint: bad hex word '" + s + "'");
  for (char c : s) {
    bits <<= 4;
    if (c >= '0' && c <= '9')
      bits |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f')
      bits |= static_cast<std::uint64_t>(c - 'a' + 10);
    else
      throw checkpoint_error("checkpoint: bad hex word '" + s + "'");
  }
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

}  // namespace detail

struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, ad::Tensor>> tensors;

  const ad::Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw checkpoint_error("checkpoint: missing tensor '" + name + "'");
  }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw checkpoint_error("checkpoint: missing meta key '" + key + "'");
    return it->second;
  }
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw checkpoint_error("checkpoint: cannot open for writing: " + path);
  out << "TAGE-CKPT 1\n";
  out << "KIND " << ck.kind << "\n";
  for (const auto& [k, v] : ck.meta) out << "META " << k << " " << v << "\n";
  for (const auto& [name, t] : ck.tensors) {
    out << "TENSOR " << name << " " << t.rows() << " " << t.cols() << "\n";
    for (std::size_t i = 0; i < t.rows(); ++i) {
      for (std::size_t j = 0; j < t.cols(); ++j) {
        if (j) out << ' ';
        out << detail::double_to_hex(t.at(i, j));
      }
      out << "\n";
    }
  }
  out << "END\n";
  if (!out) throw checkpoint_error("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw checkpoint_error("checkpoint: cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "TAGE-CKPT 1")
    throw checkpoint_error("checkpoint: bad magic in " + path);
  Checkpoint ck;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "END") return ck;
    if (tag == "KIND") {
      ls >> ck.kind;
    } else if (tag == "META") {
      std::string k, v;
      ls >> k;
      std::getline(ls, v);
      if (!v.empty() && v.front() == ' ') v.erase(0, 1);
      ck.meta[k] = v;
    } else if (tag == "TENSOR") {
      std::string name;
      std::size_t rows = 0, cols = 0;
      if (!(ls >> name >> rows >> cols)) throw checkpoint_error("checkpoint: bad tensor header");
      ad::Tensor t(rows, cols);
      for (std::size_t i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) throw checkpoint_error("checkpoint: truncated tensor");
        std::istringstream rs(line);
        std::string word;
        for (std::size_t j = 0; j < cols; ++j) {
          if (!(rs >> word)) throw checkpoint_error("checkpoint: short tensor row");
          t.at(i, j) = detail::hex_to_double(word);
        }
      }
      ck.tensors.emplace_back(name, std::move(t));
    } else {
      throw checkpoint_error("checkpoint: unknown record '" + tag + "'");
    }
  }
  throw checkpoint_error("checkpoint: missing END in " + path);
}

// ---- typed wrappers ----

inline void save_encoder(const Encoder& enc, const std::string& path) {
  Checkpoint ck;
  ck.kind = "encoder";
  ck.meta["layer_kind"] = enc.kind == LayerKind::Gcn ? "gcn" : "gin";
  ck.meta["pooling"] = enc.pooling == Pooling::Mean ? "mean" : "none";
  ck.meta["depth"] = std::to_string(enc.depth());
  std::vector<ad::Tensor*> params;
  std::vector<std::string> names;
  const_cast<Encoder&>(enc).collect_params(params, &names);
  for (std::size_t i = 0; i < params.size(); ++i) ck.tensors.emplace_back(names[i], *params[i]);
  if (enc.kind == LayerKind::Gin) {
    std::string eps;
    for (const GinLayer& l : enc.gin) eps += detail::double_to_hex(l.eps) + " ";
    ck.meta["gin_eps"] = eps;
  }
  save_checkpoint(ck, path);
}

inline Encoder load_encoder(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "encoder") throw checkpoint_error("checkpoint: expected encoder, got " + ck.kind);
  Encoder enc;
  enc.kind = ck.meta_at("layer_kind") == "gcn" ? LayerKind::Gcn : LayerKind::Gin;
  enc.pooling = ck.meta_at("pooling") == "mean" ? Pooling::Mean : Pooling::None;
  std::size_t depth = std::stoul(ck.meta_at("depth"));
  if (enc.kind == LayerKind::Gcn) {
    for (std::size_t i = 0; i < depth; ++i) {
      std::string p = "gcn." + std::to_string(i);
      enc.gcn.push_back({ck.tensor(p + ".weight"), ck.tensor(p + ".bias")});
    }
  } else {
    std::istringstream eps(ck.meta_at("gin_eps"));
    for (std::size_t i = 0; i < depth; ++i) {
      std::string p = "gin." + std::to_string(i);
      GinLayer l;
      l.w1 = ck.tensor(p + ".w1");
      l.b1 = ck.tensor(p + ".b1");
      l.w2 = ck.tensor(p + ".w2");
      l.b2 = ck.tensor(p + ".b2");
      std::string word;
      eps >> word;
      l.eps = detail::hex_to_double(word);
      enc.gin.push_back(std::move(l));
    }
  }
  return enc;
}

inline void save_head(const DownstreamHead& head, const std::string& path) {
  Checkpoint ck;
  ck.kind = "head";
  ck.tensors = {{"head.w1", head.w1}, {"head.b1", head.b1},
                {"head.w2", head.w2}, {"head.b2", head.b2}};
  save_checkpoint(ck, path);
}

inline DownstreamHead load_head(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "head") throw checkpoint_error("checkpoint: expected head, got " + ck.kind);
  return {ck.tensor("head.w1"), ck.tensor("head.b1"), ck.tensor("head.w2"),
          ck.tensor("head.b2")};
}

inline void save_explainer(const EmbeddingExplainer& ex, const std::string& path) {
  Checkpoint ck;
  ck.kind = "explainer";
  ck.meta["mode"] = ex.mode == ExplainerMode::Graph ? "graph" : "node";
  std::vector<ad::Tensor*> params;
  std::vector<std::string> names;
  const_cast<EmbeddingExplainer&>(ex).collect_params(params, &names);
  for (std::size_t i = 0; i < params.size(); ++i) ck.tensors.emplace_back(names[i], *params[i]);
  save_checkpoint(ck, path);
}

inline EmbeddingExplainer load_explainer(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "explainer")
    throw checkpoint_error("checkpoint: expected explainer, got " + ck.kind);
  EmbeddingExplainer ex;
  ex.mode = ck.meta_at("mode") == "graph" ? ExplainerMode::Graph : ExplainerMode::Node;
  ex.proj_w = ck.tensor("proj_w");
  ex.proj_b = ck.tensor("proj_b");
  ex.w1 = ck.tensor("mlp.w1");
  ex.b1 = ck.tensor("mlp.b1");
  ex.w2 = ck.tensor("mlp.w2");
  ex.b2 = ck.tensor("mlp.b2");
  return ex;
}

}  // namespace tage
