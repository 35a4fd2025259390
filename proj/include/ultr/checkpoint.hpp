#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ultr/common.hpp"
#include "ultr/diff.hpp"

namespace ultr::ckpt {

// Named-tensor text container:
//
//   ultr-checkpoint 1
//   meta <key> <value>
//   tensor <name> <rows> <cols>
//   <one row of %.17g values per line>
//   end
//
// Doubles round-trip exactly; the layout is stable across runs.

inline void save(std::ostream& out, const diff::ParamStore& params,
                 const std::map<std::string, std::string>& meta) {
  out << "ultr-checkpoint 1\n";
  for (const auto& [k, v] : meta) out << "meta " << k << ' ' << v << '\n';
  for (std::size_t t = 0; t < params.tensor_count(); ++t) {
    const auto& e = params.entry(t);
    out << "tensor " << e.name << ' ' << e.value.rows() << ' '
        << e.value.cols() << '\n';
    for (Eigen::Index i = 0; i < e.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < e.value.cols(); ++j) {
        if (j) out << ' ';
        out << fmt_exact(e.value(i, j));
      }
      out << '\n';
    }
  }
  out << "end\n";
}

inline void save_file(const std::string& path, const diff::ParamStore& params,
                      const std::map<std::string, std::string>& meta) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  save(f, params, meta);
}

struct Loaded {
  std::map<std::string, std::string> meta;
  diff::ParamStore params;
};

inline Loaded load(std::istream& in) {
  Loaded out;
  std::string line;
  if (!std::getline(in, line) || line != "ultr-checkpoint 1")
    throw ParseError("checkpoint: bad header");
  while (std::getline(in, line)) {
    if (line == "end") return out;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      out.meta[key] = value;
    } else if (tag == "tensor") {
      std::string name;
      Eigen::Index rows, cols;
      if (!(ls >> name >> rows >> cols) || rows < 0 || cols < 0)
        throw ParseError("checkpoint: bad tensor header: " + line);
      auto h = out.params.add_zero(name, rows, cols);
      auto& m = out.params.value(h);
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (!std::getline(in, line))
          throw ParseError("checkpoint: truncated tensor " + name);
        std::istringstream row(line);
        for (Eigen::Index j = 0; j < cols; ++j)
          if (!(row >> m(i, j)))
            throw ParseError("checkpoint: bad value in tensor " + name);
      }
    } else {
      throw ParseError("checkpoint: unknown record: " + line);
    }
  }
  throw ParseError("checkpoint: missing end marker");
}

inline Loaded load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  return load(f);
}

// Copy values from `from` into `into`, matching tensors by name; every
// tensor of `into` must be present with an identical shape.
inline void restore_values(diff::ParamStore& into,
                           const diff::ParamStore& from) {
  for (std::size_t t = 0; t < into.tensor_count(); ++t) {
    auto& e = into.entry(t);
    bool found = false;
    for (std::size_t s = 0; s < from.tensor_count(); ++s) {
      const auto& src = from.entry(s);
      if (src.name != e.name) continue;
      if (src.value.rows() != e.value.rows() ||
          src.value.cols() != e.value.cols())
        throw ShapeError("checkpoint: shape mismatch for tensor " + e.name);
      e.value = src.value;
      found = true;
      break;
    }
    if (!found) throw ParseError("checkpoint: missing tensor " + e.name);
  }
}

}  // namespace ultr::ckpt
