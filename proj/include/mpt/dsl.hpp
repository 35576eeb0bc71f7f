#pragma once

// Line-oriented text format for MPT models. See docs/grammar.md.
//
//   param D_o
//   simplex s = s_l s_m s_h
//   order s: s_l <= s_m <= s_h
//   partial g: a >= b, a >= c
//   tree old
//     category old_high : D_o*s_h + ~D_o*g*o_h
//
// `#` starts a comment. Parsing is total: it never aborts mid-file and
// collects every error with a source span. Comments are not preserved by
// serialize_model (documented lossy round-trip).

#include <cctype>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mpt/model.hpp"

namespace mpt {

struct SourceSpan {
  int line = 1;
  int col_begin = 1;
  int col_end = 1;
};

struct ParseError {
  SourceSpan span;
  std::string message;
  std::vector<std::string> expected;
};

struct ParseResult {
  std::optional<MptModel> model;
  std::vector<ParseError> errors;
  bool ok() const { return model.has_value() && errors.empty(); }
};

namespace dsl_detail {

struct Token {
  enum class Kind { ident, integer, punct, end } kind = Kind::end;
  std::string text;
  int col_begin = 1;
  int col_end = 1;
};

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

inline std::vector<Token> lex_line(const std::string& line, int line_no,
                                   std::vector<ParseError>& errors) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (c == '#') break;
    if (c == ' ' || c == '\t') {
      ++i;
      continue;
    }
    int col = static_cast<int>(i) + 1;
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < line.size() && ident_char(line[j])) ++j;
      tokens.push_back({Token::Kind::ident, line.substr(i, j - i), col, static_cast<int>(j)});
      i = j;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
      tokens.push_back({Token::Kind::integer, line.substr(i, j - i), col, static_cast<int>(j)});
      i = j;
    } else if ((c == '<' || c == '>') && i + 1 < line.size() && line[i + 1] == '=') {
      tokens.push_back({Token::Kind::punct, line.substr(i, 2), col, col + 1});
      i += 2;
    } else if (c == '=' || c == ':' || c == '~' || c == '*' || c == '+' || c == ',' || c == '/') {
      tokens.push_back({Token::Kind::punct, std::string(1, c), col, col});
      i += 1;
    } else {
      errors.push_back({{line_no, col, col}, std::string("unexpected character '") + c + "'", {}});
      ++i;
    }
  }
  return tokens;
}

struct Cursor {
  const std::vector<Token>* tokens;
  std::size_t pos = 0;
  int line_no;
  std::vector<ParseError>* errors;

  const Token& peek() const {
    static const Token end_token{};
    return pos < tokens->size() ? (*tokens)[pos] : end_token;
  }
  bool done() const { return pos >= tokens->size(); }
  const Token& advance() {
    const Token& t = peek();
    if (!done()) ++pos;
    return t;
  }
  bool accept_punct(const std::string& p) {
    if (peek().kind == Token::Kind::punct && peek().text == p) {
      ++pos;
      return true;
    }
    return false;
  }
  SourceSpan span_here() const {
    if (done()) {
      int c = tokens->empty() ? 1 : tokens->back().col_end + 1;
      return {line_no, c, c};
    }
    return {line_no, peek().col_begin, peek().col_end};
  }
  void error(const std::string& msg, std::vector<std::string> expected = {}) {
    errors->push_back({span_here(), msg, std::move(expected)});
  }
  std::optional<std::string> expect_ident(const std::string& what) {
    if (peek().kind == Token::Kind::ident) return advance().text;
    error("expected " + what, {"identifier"});
    return std::nullopt;
  }
  bool expect_punct(const std::string& p) {
    if (accept_punct(p)) return true;
    error("expected '" + p + "'", {p});
    return false;
  }
};

// Unresolved lines kept for a second pass so declarations may appear anywhere.
struct PendingOrder {
  bool partial;
  std::string group;
  SourceSpan group_span;
  // chain
  std::vector<std::pair<std::string, SourceSpan>> chain;
  bool descending = true;
  // partial
  std::vector<std::tuple<std::string, SourceSpan, std::string, SourceSpan>> pairs;  // hi, lo
};

struct PendingFactor {
  FactorKind kind;
  std::string param;
  Rational value;
  SourceSpan span;
};

struct PendingBranch {
  std::string tree;
  std::string category;
  std::vector<PendingFactor> factors;
};

}  // namespace dsl_detail

inline ParseResult parse_model(std::string_view source) {
  using namespace dsl_detail;
  ParseResult result;
  auto& errors = result.errors;

  MptModel model;
  std::vector<PendingOrder> pending_orders;
  std::vector<PendingBranch> pending_branches;
  std::map<std::string, int> decl_line;  // any declared name -> line
  std::string current_tree;

  auto declare = [&](const std::string& name, int line_no, SourceSpan span) -> bool {
    if (model.name_taken(name)) {
      errors.push_back({span, "duplicate name '" + name + "'", {}});
      return false;
    }
    decl_line[name] = line_no;
    return true;
  };

  std::vector<std::string> lines;
  {
    std::string current;
    for (char c : source) {
      if (c == '\n') {
        if (!current.empty() && current.back() == '\r') current.pop_back();
        lines.push_back(current);
        current.clear();
      } else {
        current.push_back(c);
      }
    }
    if (!current.empty() && current.back() == '\r') current.pop_back();
    lines.push_back(current);
  }

  for (std::size_t li = 0; li < lines.size(); ++li) {
    int line_no = static_cast<int>(li) + 1;
    std::vector<Token> tokens = lex_line(lines[li], line_no, errors);
    if (tokens.empty()) continue;
    Cursor cur{&tokens, 0, line_no, &errors};

    if (tokens[0].kind != Token::Kind::ident) {
      cur.error("expected a declaration keyword",
                {"param", "simplex", "order", "partial", "tree", "category"});
      continue;
    }
    std::string keyword = cur.advance().text;

    if (keyword == "param") {
      auto name = cur.expect_ident("parameter name");
      if (!name) continue;
      SourceSpan sp{line_no, tokens[1].col_begin, tokens[1].col_end};
      if (declare(*name, line_no, sp)) model.parameters.push_back({*name, ParamKind::binary, ""});
      if (!cur.done()) cur.error("trailing tokens after parameter declaration");
    } else if (keyword == "simplex") {
      auto gname = cur.expect_ident("group name");
      if (!gname) continue;
      SourceSpan gsp = {line_no, tokens[1].col_begin, tokens[1].col_end};
      if (!cur.expect_punct("=")) continue;
      std::vector<std::string> members;
      bool bad = false;
      while (!cur.done()) {
        auto m = cur.expect_ident("group member");
        if (!m) {
          bad = true;
          break;
        }
        members.push_back(*m);
      }
      if (bad) continue;
      if (members.size() < 2) {
        errors.push_back({gsp, "simplex group '" + *gname + "' needs at least 2 members", {}});
        continue;
      }
      if (!declare(*gname, line_no, gsp)) continue;
      bool members_ok = true;
      for (const auto& m : members)
        if (!declare(m, line_no, gsp)) members_ok = false;
      if (!members_ok) continue;
      model.groups.push_back({*gname, members});
      for (const auto& m : members)
        model.parameters.push_back({m, ParamKind::simplex_member, *gname});
    } else if (keyword == "order" || keyword == "partial") {
      PendingOrder po;
      po.partial = keyword == "partial";
      auto gname = cur.expect_ident("group name");
      if (!gname) continue;
      po.group = *gname;
      po.group_span = {line_no, tokens[1].col_begin, tokens[1].col_end};
      if (!cur.expect_punct(":")) continue;
      if (!po.partial) {
        SourceSpan sp0 = cur.span_here();
        auto first = cur.expect_ident("member name");
        if (!first) continue;
        po.chain.push_back({*first, sp0});
        std::optional<bool> descending;
        bool bad = false;
        while (!cur.done()) {
          bool ge = cur.accept_punct(">=");
          bool le = !ge && cur.accept_punct("<=");
          if (!ge && !le) {
            cur.error("expected '<=' or '>='", {"<=", ">="});
            bad = true;
            break;
          }
          if (descending.has_value() && *descending != ge) {
            cur.error("cannot mix '<=' and '>=' in one chain");
            bad = true;
            break;
          }
          descending = ge;
          SourceSpan msp = cur.span_here();
          auto m = cur.expect_ident("member name");
          if (!m) {
            bad = true;
            break;
          }
          po.chain.push_back({*m, msp});
        }
        if (bad) continue;
        if (po.chain.size() < 2) {
          errors.push_back({po.group_span, "order needs at least two members", {}});
          continue;
        }
        po.descending = descending.value_or(true);
        pending_orders.push_back(std::move(po));
      } else {
        bool bad = false;
        while (true) {
          SourceSpan asp = cur.span_here();
          auto a = cur.expect_ident("member name");
          if (!a) {
            bad = true;
            break;
          }
          bool ge = cur.accept_punct(">=");
          bool le = !ge && cur.accept_punct("<=");
          if (!ge && !le) {
            cur.error("expected '<=' or '>='", {"<=", ">="});
            bad = true;
            break;
          }
          SourceSpan bsp = cur.span_here();
          auto b = cur.expect_ident("member name");
          if (!b) {
            bad = true;
            break;
          }
          if (ge)
            po.pairs.push_back({*a, asp, *b, bsp});
          else
            po.pairs.push_back({*b, bsp, *a, asp});
          if (cur.done()) break;
          if (!cur.expect_punct(",")) {
            bad = true;
            break;
          }
        }
        if (bad) continue;
        pending_orders.push_back(std::move(po));
      }
    } else if (keyword == "tree") {
      auto name = cur.expect_ident("tree name");
      if (!name) continue;
      SourceSpan sp{line_no, tokens[1].col_begin, tokens[1].col_end};
      if (model.has_tree(*name)) {
        errors.push_back({sp, "duplicate tree '" + *name + "'", {}});
        continue;
      }
      decl_line[*name] = line_no;
      model.trees.push_back(*name);
      model.categories[*name] = {};
      current_tree = *name;
      if (!cur.done()) cur.error("trailing tokens after tree declaration");
    } else if (keyword == "category") {
      if (current_tree.empty()) {
        errors.push_back({{line_no, tokens[0].col_begin, tokens[0].col_end},
                          "category line outside a tree",
                          {}});
        continue;
      }
      auto cname = cur.expect_ident("category name");
      if (!cname) continue;
      if (!cur.expect_punct(":")) continue;
      auto& cats = model.categories[current_tree];
      if (std::find(cats.begin(), cats.end(), *cname) == cats.end()) cats.push_back(*cname);
      // terms: factor (* factor)* separated by '+'
      bool bad = false;
      while (true) {
        PendingBranch branch;
        branch.tree = current_tree;
        branch.category = *cname;
        while (true) {
          PendingFactor factor;
          factor.span = cur.span_here();
          if (cur.accept_punct("~")) {
            SourceSpan psp = cur.span_here();
            auto p = cur.expect_ident("parameter after '~'");
            if (!p) {
              bad = true;
              break;
            }
            factor.kind = FactorKind::complement;
            factor.param = *p;
            factor.span.col_end = psp.col_end;
          } else if (cur.peek().kind == Token::Kind::ident) {
            factor.kind = FactorKind::direct;
            factor.param = cur.advance().text;
          } else if (cur.peek().kind == Token::Kind::integer) {
            long long num = std::stoll(cur.advance().text);
            long long den = 1;
            if (cur.accept_punct("/")) {
              if (cur.peek().kind != Token::Kind::integer) {
                cur.error("expected denominator", {"integer"});
                bad = true;
                break;
              }
              den = std::stoll(cur.advance().text);
            }
            if (den == 0) {
              errors.push_back({factor.span, "zero denominator in constant factor", {}});
              bad = true;
              break;
            }
            Rational r(num, den);
            if (r < Rational(0) || r > Rational(1)) {
              errors.push_back({factor.span, "constant factor " + r.str() + " outside [0,1]", {}});
              bad = true;
              break;
            }
            factor.kind = FactorKind::constant;
            factor.value = r;
          } else {
            cur.error("expected a factor", {"identifier", "~", "constant"});
            bad = true;
            break;
          }
          branch.factors.push_back(std::move(factor));
          if (!cur.accept_punct("*")) break;
        }
        if (bad) break;
        pending_branches.push_back(std::move(branch));
        if (cur.done()) break;
        if (!cur.expect_punct("+")) {
          bad = true;
          break;
        }
      }
      if (bad) continue;
    } else {
      errors.push_back({{line_no, tokens[0].col_begin, tokens[0].col_end},
                        "unknown keyword '" + keyword + "'",
                        {"param", "simplex", "order", "partial", "tree", "category"}});
    }
  }

  // Second pass: resolve references now that all declarations are known.
  std::map<std::string, std::set<std::string>> constrained;  // group -> members under an order
  for (const auto& po : pending_orders) {
    const SimplexGroup* g = model.find_group(po.group);
    if (g == nullptr) {
      const Parameter* p = model.find_parameter(po.group);
      if (p != nullptr)
        errors.push_back(
            {po.group_span, "order constraints apply to simplex members only", {}});
      else
        errors.push_back({po.group_span, "unknown group '" + po.group + "'", {}});
      continue;
    }
    auto is_member = [&](const std::string& m) {
      return std::find(g->members.begin(), g->members.end(), m) != g->members.end();
    };
    OrderSpec spec;
    spec.group = po.group;
    std::vector<std::pair<std::string, SourceSpan>> mentioned;
    if (!po.partial) {
      spec.kind = OrderSpec::Kind::chain;
      for (const auto& [m, sp] : po.chain) mentioned.push_back({m, sp});
      if (po.descending)
        for (const auto& [m, sp] : po.chain) spec.chain.push_back(m);
      else
        for (auto it = po.chain.rbegin(); it != po.chain.rend(); ++it)
          spec.chain.push_back(it->first);
    } else {
      spec.kind = OrderSpec::Kind::partial;
      for (const auto& [hi, hisp, lo, losp] : po.pairs) {
        spec.pairs.push_back({hi, lo});
        mentioned.push_back({hi, hisp});
        mentioned.push_back({lo, losp});
      }
    }
    bool ok = true;
    std::set<std::string> distinct;
    for (const auto& [m, sp] : mentioned) {
      if (!is_member(m)) {
        errors.push_back({sp, "'" + m + "' is not a member of group '" + po.group + "'", {}});
        ok = false;
      }
      distinct.insert(m);
    }
    if (!po.partial && distinct.size() != spec.chain.size()) {
      errors.push_back({po.group_span, "order repeats a member", {}});
      ok = false;
    }
    auto& used = constrained[po.group];
    for (const auto& m : distinct) {
      if (used.count(m)) {
        errors.push_back({po.group_span,
                          "overlapping order constraints on '" + m + "' in group '" + po.group +
                              "' (constraints on one group must not share members)",
                          {}});
        ok = false;
      }
    }
    if (ok)
      for (const auto& m : distinct) used.insert(m);
    if (ok) model.orders.push_back(std::move(spec));
  }

  for (const auto& pb : pending_branches) {
    Branch b;
    b.tree = pb.tree;
    b.category = pb.category;
    bool ok = true;
    for (const auto& f : pb.factors) {
      if (f.kind == FactorKind::constant) {
        b.factors.push_back(FactorTerm::constant(f.value));
        continue;
      }
      const Parameter* p = model.find_parameter(f.param);
      if (p == nullptr) {
        errors.push_back({f.span, "unknown parameter '" + f.param + "'", {}});
        ok = false;
        continue;
      }
      if (f.kind == FactorKind::complement && p->kind != ParamKind::binary) {
        errors.push_back(
            {f.span, "complement '~" + f.param + "' is only legal on binary parameters", {}});
        ok = false;
        continue;
      }
      b.factors.push_back({f.kind, f.param, {}});
    }
    if (ok) model.branches.push_back(std::move(b));
  }

  if (model.trees.empty() && errors.empty())
    errors.push_back({{1, 1, 1}, "no trees declared", {}});

  if (!errors.empty()) return result;

  normalize_branch_order(model);
  for (const auto& diag : validate(model)) {
    SourceSpan sp{1, 1, 1};
    // try to anchor the diagnostic at the first quoted name we know
    std::size_t q1 = diag.find('\'');
    if (q1 != std::string::npos) {
      std::size_t q2 = diag.find('\'', q1 + 1);
      if (q2 != std::string::npos) {
        auto it = decl_line.find(diag.substr(q1 + 1, q2 - q1 - 1));
        if (it != decl_line.end()) sp.line = it->second;
      }
    }
    errors.push_back({sp, diag, {}});
  }
  if (!errors.empty()) return result;

  result.model = std::move(model);
  return result;
}

inline std::string serialize_model(const MptModel& model) {
  std::ostringstream out;
  for (const auto& p : model.parameters)
    if (p.kind == ParamKind::binary) out << "param " << p.name << "\n";
  for (const auto& g : model.groups) {
    out << "simplex " << g.name << " =";
    for (const auto& m : g.members) out << " " << m;
    out << "\n";
  }
  for (const auto& o : model.orders) {
    if (o.kind == OrderSpec::Kind::chain) {
      out << "order " << o.group << ": ";
      for (std::size_t i = 0; i < o.chain.size(); ++i) {
        if (i > 0) out << " >= ";
        out << o.chain[i];
      }
      out << "\n";
    } else {
      out << "partial " << o.group << ": ";
      for (std::size_t i = 0; i < o.pairs.size(); ++i) {
        if (i > 0) out << ", ";
        out << o.pairs[i].first << " >= " << o.pairs[i].second;
      }
      out << "\n";
    }
  }
  for (const auto& t : model.trees) {
    out << "tree " << t << "\n";
    for (const auto& c : model.categories.at(t)) {
      out << "  category " << c << " :";
      bool first_term = true;
      for (const auto& b : model.branches) {
        if (b.tree != t || b.category != c) continue;
        out << (first_term ? " " : " + ");
        first_term = false;
        for (std::size_t i = 0; i < b.factors.size(); ++i) {
          if (i > 0) out << "*";
          const auto& f = b.factors[i];
          switch (f.kind) {
            case FactorKind::direct: out << f.param; break;
            case FactorKind::complement: out << "~" << f.param; break;
            case FactorKind::constant: out << f.value.str(); break;
          }
        }
      }
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace mpt
