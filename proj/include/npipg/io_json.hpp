#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "npipg/core.hpp"
#include "npipg/qp_model.hpp"
#include "npipg/sets.hpp"

// Problem file format:
//
//   {
//     "stages": [ [ {"kind": "box", "lo": [..], "hi": [..], "rho": 1.0}, ... ], ... ],
//     "q": [..],
//     "g": [..],
//     "blocks": [ {"A": [[..], ..], "B": [[..], ..]}, ... ],
//     "cone": [ {"eq": 3, "ineq": 1}, ... ]
//   }
//
// Set kinds and their fields:
//   full_space {dim}   point {c}   box {lo, hi}   ball {center, radius}
//   second_order_cone {dim}   halfspace {a, b}   affine_subspace {projector, anchor}
// "rho" defaults to 1. Matrices are row-major arrays of rows; an empty array
// is a block with no rows.
namespace npipg::io {

using nlohmann::json;

/// Malformed or invalid input file. `line` is 0 when no position is known.
class InputError : public Error {
 public:
  InputError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

namespace detail {

inline int line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + offset, '\n'));
}

inline const json& field(const json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) {
    throw InputError(path + ": missing field \"" + key + "\"");
  }
  return j.at(key);
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw InputError(path + ": expected a number");
  return j.get<double>();
}

inline int integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw InputError(path + ": expected an integer");
  return j.get<int>();
}

inline Vec vector(const json& j, const std::string& path) {
  if (!j.is_array()) throw InputError(path + ": expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[k] = number(j[k], path + "/" + std::to_string(k));
  return v;
}

inline RowMat matrix(const json& j, int cols, const std::string& path) {
  if (!j.is_array()) throw InputError(path + ": expected an array of rows");
  RowMat m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const std::string rp = path + "/" + std::to_string(r);
    const Vec row = vector(j[r], rp);
    if (row.size() != cols) {
      throw InputError(rp + ": row has " + std::to_string(row.size()) + " entries, expected " +
                       std::to_string(cols));
    }
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

inline SetConstraint set_from_json(const json& j, const std::string& path) {
  const json& kind_j = field(j, "kind", path);
  if (!kind_j.is_string()) throw InputError(path + "/kind: expected a string");
  const std::string kind = kind_j.get<std::string>();
  const double rho = j.contains("rho") ? number(j.at("rho"), path + "/rho") : 1.0;
  const auto f = [&](const char* key) { return field(j, key, path); };
  const auto sub = [&](const char* key) { return path + "/" + key; };
  if (kind == "full_space") return SetConstraint::full_space(integer(f("dim"), sub("dim")), rho);
  if (kind == "point") return SetConstraint::point(vector(f("c"), sub("c")), rho);
  if (kind == "box") return SetConstraint::box(vector(f("lo"), sub("lo")), vector(f("hi"), sub("hi")), rho);
  if (kind == "ball") {
    return SetConstraint::ball(vector(f("center"), sub("center")), number(f("radius"), sub("radius")), rho);
  }
  if (kind == "second_order_cone") {
    return SetConstraint::second_order_cone(integer(f("dim"), sub("dim")), rho);
  }
  if (kind == "halfspace") return SetConstraint::halfspace(vector(f("a"), sub("a")), number(f("b"), sub("b")), rho);
  if (kind == "affine_subspace") {
    const Vec anchor = vector(f("anchor"), sub("anchor"));
    const int n = static_cast<int>(anchor.size());
    return SetConstraint::affine_subspace(matrix(f("projector"), n, sub("projector")), anchor, rho);
  }
  throw InputError(path + "/kind: unknown set kind \"" + kind + "\"");
}

inline json vec_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline json mat_json(const RowMat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

inline json set_json(const SetConstraint& s) {
  json j = std::visit(
      Overloaded{
          [](const shape::FullSpace& x) { return json{{"dim", x.dim}}; },
          [](const shape::Point& x) { return json{{"c", vec_json(x.c)}}; },
          [](const shape::Box& x) { return json{{"lo", vec_json(x.lo)}, {"hi", vec_json(x.hi)}}; },
          [](const shape::Ball& x) { return json{{"center", vec_json(x.center)}, {"radius", x.radius}}; },
          [](const shape::SecondOrderCone& x) { return json{{"dim", x.dim}}; },
          [](const shape::Halfspace& x) { return json{{"a", vec_json(x.a)}, {"b", x.b}}; },
          [](const shape::AffineSubspace& x) {
            return json{{"projector", mat_json(x.projector)}, {"anchor", vec_json(x.anchor)}};
          },
      },
      s.shape);
  j["kind"] = std::string(s.kind_name());
  j["rho"] = s.rho;
  return j;
}

}  // namespace detail

/// Parses and validates a problem. Throws InputError; syntax errors carry
/// the line number, schema errors the JSON path.
inline QpProblem problem_from_string(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(e.what(), detail::line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0));
  }
  QpProblem p;
  const json& stages = detail::field(root, "stages", "");
  if (!stages.is_array()) throw InputError("/stages: expected an array");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string sp = "/stages/" + std::to_string(i);
    if (!stages[i].is_array()) throw InputError(sp + ": expected an array of sets");
    Stage st;
    for (std::size_t k = 0; k < stages[i].size(); ++k) {
      st.push_back(detail::set_from_json(stages[i][k], sp + "/" + std::to_string(k)));
    }
    p.stages.push_back(std::move(st));
  }
  const auto stage_dim = [&](std::size_t i) { return i < p.stages.size() ? p.stage_dim(static_cast<int>(i)) : 0; };

  const json& blocks = detail::field(root, "blocks", "");
  if (!blocks.is_array()) throw InputError("/blocks: expected an array");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string bp = "/blocks/" + std::to_string(i);
    p.h.a.push_back(detail::matrix(detail::field(blocks[i], "A", bp), stage_dim(i), bp + "/A"));
    p.h.b.push_back(detail::matrix(detail::field(blocks[i], "B", bp), stage_dim(i + 1), bp + "/B"));
  }
  const json& cone = detail::field(root, "cone", "");
  if (!cone.is_array()) throw InputError("/cone: expected an array");
  for (std::size_t i = 0; i < cone.size(); ++i) {
    const std::string cp = "/cone/" + std::to_string(i);
    p.cone.rows.push_back({detail::integer(detail::field(cone[i], "eq", cp), cp + "/eq"),
                           detail::integer(detail::field(cone[i], "ineq", cp), cp + "/ineq")});
  }
  p.q = detail::vector(detail::field(root, "q", ""), "/q");
  p.g = detail::vector(detail::field(root, "g", ""), "/g");
  try {
    validate(p);
  } catch (const Error& e) {
    throw InputError(e.what());
  }
  return p;
}

inline QpProblem load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return problem_from_string(ss.str());
}

inline json problem_to_json(const QpProblem& p) {
  json j;
  j["stages"] = json::array();
  for (const auto& st : p.stages) {
    json sj = json::array();
    for (const auto& s : st) sj.push_back(detail::set_json(s));
    j["stages"].push_back(std::move(sj));
  }
  j["q"] = detail::vec_json(p.q);
  j["g"] = detail::vec_json(p.g);
  j["blocks"] = json::array();
  for (int i = 0; i < p.h.block_rows(); ++i) {
    j["blocks"].push_back({{"A", detail::mat_json(p.h.a[i])}, {"B", detail::mat_json(p.h.b[i])}});
  }
  j["cone"] = json::array();
  for (const auto& r : p.cone.rows) j["cone"].push_back({{"eq", r.eq}, {"ineq", r.ineq}});
  return j;
}

}  // namespace npipg::io
