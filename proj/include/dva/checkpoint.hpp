#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dva/bayes.hpp"
#include "dva/dva.hpp"
#include "dva/heads.hpp"
#include "dva/mlp.hpp"

// Text checkpoint format, one file per model:
//
//   dva-checkpoint 1
//   array <name> <rank> <dim...>
//   <value value ...>          (hexfloat, one line per array)
//   end
//
// Values are printed with %a and parsed with strtod, so save/load round-trips
// are bit-exact. Integer quantities (widths, segment assignment) ride along
// as doubles, which is exact below 2^53.

namespace dva {

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t count() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
};

using Checkpoint = std::vector<NamedArray>;

inline const NamedArray& checkpoint_get(const Checkpoint& ck, const std::string& name) {
  for (const NamedArray& a : ck)
    if (a.name == name) return a;
  throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

inline bool checkpoint_has(const Checkpoint& ck, const std::string& name) {
  for (const NamedArray& a : ck)
    if (a.name == name) return true;
  return false;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  for (const NamedArray& a : ck) {
    if (a.name.empty() || a.name.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("checkpoint: array names must be nonempty without whitespace");
    if (a.data.size() != a.count())
      throw std::invalid_argument("checkpoint: shape does not match data size for " + a.name);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out << "dva-checkpoint 1\n";
  char buf[64];
  for (const NamedArray& a : ck) {
    out << "array " << a.name << ' ' << a.shape.size();
    for (std::size_t d : a.shape) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%a", a.data[i]);
      if (i) out << ' ';
      out << buf;
    }
    out << '\n';
  }
  out << "end\n";
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "dva-checkpoint" || version != 1)
    throw std::runtime_error("checkpoint: bad header in " + path);

  Checkpoint ck;
  while (in >> word) {
    if (word == "end") return ck;
    if (word != "array") throw std::runtime_error("checkpoint: malformed entry in " + path);
    NamedArray a;
    std::size_t rank = 0;
    if (!(in >> a.name >> rank)) throw std::runtime_error("checkpoint: truncated header");
    a.shape.resize(rank);
    for (std::size_t k = 0; k < rank; ++k)
      if (!(in >> a.shape[k])) throw std::runtime_error("checkpoint: truncated shape");
    a.data.resize(a.count());
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      if (!(in >> word)) throw std::runtime_error("checkpoint: truncated values");
      char* endp = nullptr;
      a.data[i] = std::strtod(word.c_str(), &endp);
      if (endp == word.c_str() || *endp != '\0')
        throw std::runtime_error("checkpoint: unparseable value '" + word + "'");
    }
    ck.push_back(std::move(a));
  }
  throw std::runtime_error("checkpoint: missing end marker in " + path);
}

namespace detail {

inline NamedArray pack_sizes(const std::string& name, std::span<const std::size_t> v) {
  NamedArray a{name, {v.size()}, {}};
  a.data.assign(v.begin(), v.end());
  return a;
}

inline std::vector<std::size_t> unpack_sizes(const NamedArray& a) {
  std::vector<std::size_t> v(a.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::size_t>(a.data[i]);
  return v;
}

inline void pack_head(Checkpoint& ck, const std::string& prefix, const VarianceHead& h) {
  const bool scalar = h.kind == VarianceHead::Kind::Scalar;
  ck.push_back({prefix + "_kind", {1}, {scalar ? 0.0 : 1.0}});
  if (scalar) {
    ck.push_back({prefix + "_log_var", {1}, {h.log_var}});
  } else {
    ck.push_back(pack_sizes(prefix + "_widths", h.net.widths));
    ck.push_back({prefix + "_theta", {h.net.theta.size()}, h.net.theta});
  }
}

inline VarianceHead unpack_head(const Checkpoint& ck, const std::string& prefix) {
  if (checkpoint_get(ck, prefix + "_kind").data[0] == 0.0)
    return VarianceHead::scalar(checkpoint_get(ck, prefix + "_log_var").data[0]);
  VarianceHead h;
  h.kind = VarianceHead::Kind::Network;
  h.net.widths = unpack_sizes(checkpoint_get(ck, prefix + "_widths"));
  h.net.theta = checkpoint_get(ck, prefix + "_theta").data;
  if (h.net.theta.size() != mlp_param_count(h.net.widths))
    throw std::runtime_error("checkpoint: head parameter count mismatch");
  return h;
}

}  // namespace detail

inline void save_mlp(const std::string& path, const Mlp& net) {
  Checkpoint ck;
  ck.push_back(detail::pack_sizes("widths", net.widths));
  ck.push_back({"theta", {net.theta.size()}, net.theta});
  write_checkpoint(path, ck);
}

inline Mlp load_mlp(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  Mlp net;
  net.widths = detail::unpack_sizes(checkpoint_get(ck, "widths"));
  net.theta = checkpoint_get(ck, "theta").data;
  if (net.theta.size() != mlp_param_count(net.widths))
    throw std::runtime_error("checkpoint: parameter count mismatch");
  return net;
}

inline void save_bayes(const std::string& path, const BayesMlp& net) {
  Checkpoint ck;
  ck.push_back(detail::pack_sizes("widths", net.widths));
  ck.push_back({"mu", {net.mu.size()}, net.mu});
  ck.push_back({"rho", {net.rho.size()}, net.rho});
  write_checkpoint(path, ck);
}

inline BayesMlp load_bayes(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  BayesMlp net;
  net.widths = detail::unpack_sizes(checkpoint_get(ck, "widths"));
  net.mu = checkpoint_get(ck, "mu").data;
  net.rho = checkpoint_get(ck, "rho").data;
  if (net.mu.size() != mlp_param_count(net.widths) || net.rho.size() != net.mu.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  return net;
}

inline void save_ensemble(const std::string& path, const std::vector<Mlp>& members) {
  if (members.empty()) throw std::invalid_argument("save_ensemble: no members");
  Checkpoint ck;
  ck.push_back(detail::pack_sizes("widths", members[0].widths));
  NamedArray all{"members", {members.size(), members[0].theta.size()}, {}};
  for (const Mlp& m : members) {
    if (m.widths != members[0].widths)
      throw std::invalid_argument("save_ensemble: members disagree on architecture");
    all.data.insert(all.data.end(), m.theta.begin(), m.theta.end());
  }
  ck.push_back(std::move(all));
  write_checkpoint(path, ck);
}

inline std::vector<Mlp> load_ensemble(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  const std::vector<std::size_t> widths = detail::unpack_sizes(checkpoint_get(ck, "widths"));
  const NamedArray& all = checkpoint_get(ck, "members");
  if (all.shape.size() != 2 || all.shape[1] != mlp_param_count(widths))
    throw std::runtime_error("checkpoint: ensemble shape mismatch");
  std::vector<Mlp> members(all.shape[0]);
  for (std::size_t k = 0; k < members.size(); ++k) {
    members[k].widths = widths;
    members[k].theta.assign(all.data.begin() + k * all.shape[1],
                            all.data.begin() + (k + 1) * all.shape[1]);
  }
  return members;
}

inline void save_dva_state(const std::string& path, const DvaState& st) {
  Checkpoint ck;
  ck.push_back({"eps_hat", {st.eps_hat.size()}, st.eps_hat});
  detail::pack_head(ck, "sigma", st.sigma_head);
  detail::pack_head(ck, "va", st.va_head);
  ck.push_back({"seg_G", {1}, {double(st.seg.G)}});
  NamedArray assign{"seg_assign", {st.seg.assign.size()}, {}};
  assign.data.assign(st.seg.assign.begin(), st.seg.assign.end());
  ck.push_back(std::move(assign));
  write_checkpoint(path, ck);
}

inline DvaState load_dva_state(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  DvaState st;
  st.eps_hat = checkpoint_get(ck, "eps_hat").data;
  st.sigma_head = detail::unpack_head(ck, "sigma");
  st.va_head = detail::unpack_head(ck, "va");
  st.seg.G = static_cast<std::size_t>(checkpoint_get(ck, "seg_G").data[0]);
  const NamedArray& assign = checkpoint_get(ck, "seg_assign");
  st.seg.assign.resize(assign.data.size());
  for (std::size_t i = 0; i < assign.data.size(); ++i)
    st.seg.assign[i] = static_cast<std::uint32_t>(assign.data[i]);
  if (st.seg.assign.size() != st.eps_hat.size())
    throw std::runtime_error("checkpoint: segmentation does not cover eps_hat");
  return st;
}

}  // namespace dva
