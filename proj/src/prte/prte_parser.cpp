#include "treegress/error.hpp"
#include "treegress/prte.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

namespace treegress {

namespace {

constexpr std::string_view kNonIdent = "(){},:;$.";

bool ident_char(char c) {
  return !std::isspace(static_cast<unsigned char>(c)) && kNonIdent.find(c) == std::string_view::npos;
}

bool all_digits(std::string_view s) {
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) s.remove_prefix(1);
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

class PrteParser {
 public:
  PrteParser(std::string_view text, Alphabet& alphabet, bool extend)
      : text_(text), alphabet_(alphabet), extend_(extend) {}

  Prte parse() {
    Prte e = expr();
    skip();
    if (pos_ < text_.size()) fail("unexpected `" + std::string(1, text_[pos_]) + "` after expression");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& message, ErrorCode code = ErrorCode::SyntaxError) const {
    fail_at(here(), message, code);
  }

  [[noreturn]] static void fail_at(SourcePos p, const std::string& message, ErrorCode code = ErrorCode::SyntaxError) {
    throw SyntaxError(code, p.line, p.column, message);
  }

  SourcePos here() const {
    SourcePos p{1, 1};
    for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) {
      if (text_[i] == '\n') {
        ++p.line;
        p.column = 1;
      } else {
        ++p.column;
      }
    }
    return p;
  }

  void skip() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (c == ';') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  bool peek(char c) {
    skip();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  void expect(char c) {
    if (!peek(c)) {
      if (pos_ >= text_.size()) fail(std::string("expected `") + c + "` but input ended");
      fail(std::string("expected `") + c + "`, found `" + text_[pos_] + "`");
    }
    ++pos_;
  }

  // Identifier or number; a decimal point is absorbed when it joins digits.
  std::string_view word() {
    skip();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
    if (pos_ < text_.size() && text_[pos_] == '.' && pos_ + 1 < text_.size() &&
        std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])) && all_digits(text_.substr(start, pos_ - start))) {
      ++pos_;
      while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
    }
    if (start == pos_) {
      if (pos_ >= text_.size()) fail("unexpected end of input");
      fail("unexpected `" + std::string(1, text_[pos_]) + "`");
    }
    return text_.substr(start, pos_ - start);
  }

  std::string variable() {
    skip();
    if (pos_ >= text_.size() || text_[pos_] != '$') fail("expected a variable such as `$x`");
    ++pos_;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
    if (start == pos_) fail("empty variable name after `$`");
    return std::string(text_.substr(start, pos_ - start));
  }

  Prte expr() {
    Prte e = primary();
    while (peek('.')) {
      const SourcePos at = here();
      ++pos_;
      if (word() != "subst") fail_at(at, "expected `subst` after `.`");
      expect('(');
      std::string var = variable();
      expect(',');
      Prte right = expr();
      expect(')');
      e = Prte::concat(std::move(e), std::move(var), std::move(right), at);
    }
    return e;
  }

  Prte primary() {
    skip();
    const SourcePos at = here();
    if (pos_ < text_.size() && text_[pos_] == '$') return Prte::var(variable(), at);
    const std::string_view name = word();
    if (name == "choice") return choice(at);
    if (name == "iter") {
      std::string var = variable();
      expect('{');
      Prte body = expr();
      expect('}');
      return Prte::iter(std::move(var), std::move(body), at);
    }
    std::vector<Prte> children;
    if (peek('(')) {
      ++pos_;
      children.push_back(expr());
      while (peek(',')) {
        ++pos_;
        children.push_back(expr());
      }
      expect(')');
    }
    const SymbolId id = resolve(name, static_cast<unsigned>(children.size()), at);
    return Prte::symbol(id, std::move(children), at);
  }

  Prte choice(SourcePos at) {
    expect('{');
    std::vector<Rational> weights;
    std::vector<Prte> branches;
    do {
      if (!branches.empty()) ++pos_;
      const SourcePos wpos = (skip(), here());
      const std::string_view w = word();
      auto value = parse_rational(w);
      if (!value) fail_at(wpos, "invalid weight `" + std::string(w) + "`");
      weights.push_back(*value);
      expect(':');
      branches.push_back(expr());
    } while (peek(','));
    expect('}');
    return Prte::choice(std::move(weights), std::move(branches), at);
  }

  SymbolId resolve(std::string_view name, unsigned rank, SourcePos at) {
    if (name == "subst") fail_at(at, "`subst` must follow `.`");
    if (name == "?") fail_at(at, "`?` is reserved for context holes", ErrorCode::UnknownSymbol);
    if (auto id = alphabet_.find(name, rank)) return *id;
    if (!extend_) {
      if (alphabet_.has_name(name)) {
        fail_at(at, "`" + std::string(name) + "` used with " + std::to_string(rank) + " arguments",
                ErrorCode::ArityMismatch);
      }
      fail_at(at, "symbol `" + std::string(name) + "` is not in the alphabet", ErrorCode::UnknownSymbol);
    }
    try {
      return alphabet_.add(name, rank);
    } catch (const Error& e) {
      fail_at(at, e.what(), e.code());
    }
  }

  std::string_view text_;
  Alphabet& alphabet_;
  bool extend_;
  std::size_t pos_ = 0;
};

void print(const Prte& e, const Alphabet& alphabet, std::string& out) {
  switch (e.kind()) {
    case Prte::Kind::Symbol:
      out += alphabet[e.symbol_id()].name;
      if (!e.children().empty()) {
        out += '(';
        for (std::size_t i = 0; i < e.children().size(); ++i) {
          if (i) out += ", ";
          print(e.children()[i], alphabet, out);
        }
        out += ')';
      }
      return;
    case Prte::Kind::Var:
      out += '$';
      out += e.var_name();
      return;
    case Prte::Kind::Choice:
      out += "choice{";
      for (std::size_t i = 0; i < e.children().size(); ++i) {
        if (i) out += ", ";
        out += format_rational(e.weights()[i]);
        out += ": ";
        print(e.children()[i], alphabet, out);
      }
      out += '}';
      return;
    case Prte::Kind::Concat:
      print(e.children()[0], alphabet, out);
      out += " . subst($" + e.var_name() + ", ";
      print(e.children()[1], alphabet, out);
      out += ')';
      return;
    case Prte::Kind::Iter:
      out += "iter $" + e.var_name() + " { ";
      print(e.children()[0], alphabet, out);
      out += " }";
      return;
  }
}

[[noreturn]] void directive_error(std::size_t line, const std::string& message) {
  throw SyntaxError(ErrorCode::SyntaxError, line, 1, message);
}

double directive_number(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    directive_error(line, "invalid number `" + std::string(s) + "`");
  }
  return v;
}

}  // namespace

Prte parse_prte(std::string_view text, Alphabet& alphabet, bool extend) {
  Prte e = PrteParser(text, alphabet, extend).parse();
  Grammar check(e);
  return e;
}

std::string format_prte(const Prte& e, const Alphabet& alphabet) {
  // The outermost substitution chain goes one link per line.
  std::vector<const Prte*> chain;
  const Prte* head = &e;
  while (head->kind() == Prte::Kind::Concat) {
    chain.push_back(head);
    head = &head->children()[0];
  }
  std::string out;
  print(*head, alphabet, out);
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    out += "\n  . subst($" + (*it)->var_name() + ", ";
    print((*it)->children()[1], alphabet, out);
    out += ')';
  }
  return out;
}

PriorSpec parse_prior(std::string_view text) {
  struct ParamLine {
    std::string marker;
    ParamPrior prior;
    std::size_t line;
  };
  std::string name;
  unsigned max_depth = 50;
  auto alphabet = std::make_shared<Alphabet>();
  bool explicit_alphabet = false;
  std::vector<ParamLine> params;
  std::vector<Rational> support;
  std::vector<std::pair<std::string, std::string>> tie_lines;

  // Directive lines are blanked so pRTE error positions still match the file.
  std::string body;
  std::size_t line_no = 0;
  bool in_header = true;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    ++line_no;
    std::string_view trimmed = line;
    while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.front()))) trimmed.remove_prefix(1);
    const bool directive = in_header && !trimmed.empty() && trimmed.front() == '@';
    if (in_header && !trimmed.empty() && trimmed.front() != '@' && trimmed.front() != ';') in_header = false;
    if (directive) {
      std::istringstream in{std::string(trimmed)};
      std::string key;
      in >> key;
      std::vector<std::string> args;
      for (std::string a; in >> a;) {
        if (a.front() == ';') break;
        args.push_back(a);
      }
      if (key == "@name") {
        if (args.size() != 1) directive_error(line_no, "@name takes one word");
        name = args[0];
      } else if (key == "@max_depth") {
        if (args.size() != 1 || !all_digits(args[0]) || args[0].front() == '-') {
          directive_error(line_no, "@max_depth takes a positive integer");
        }
        max_depth = static_cast<unsigned>(std::stoul(args[0]));
        if (max_depth == 0) directive_error(line_no, "@max_depth must be positive");
      } else if (key == "@alphabet") {
        explicit_alphabet = true;
        for (const auto& a : args) {
          const auto slash = a.rfind('/');
          if (slash == std::string::npos || slash == 0 || !all_digits(a.substr(slash + 1))) {
            directive_error(line_no, "alphabet entries are name/rank, got `" + a + "`");
          }
          try {
            alphabet->add(a.substr(0, slash), static_cast<unsigned>(std::stoul(a.substr(slash + 1))));
          } catch (const Error& e) {
            throw SyntaxError(e.code(), line_no, 1, e.what());
          }
        }
      } else if (key == "@param") {
        if (args.size() < 2) directive_error(line_no, "@param needs a marker and a family");
        ParamPrior p;
        if (args[1] == "exponential" && args.size() == 3) {
          p = ParamPrior::exponential(directive_number(args[2], line_no));
          if (p.a <= 0.0) directive_error(line_no, "exponential rate must be positive");
        } else if (args[1] == "normal" && args.size() == 4) {
          p = ParamPrior::normal(directive_number(args[2], line_no), directive_number(args[3], line_no));
          if (p.b <= 0.0) directive_error(line_no, "normal stddev must be positive");
        } else {
          directive_error(line_no, "expected `@param m# exponential RATE` or `@param m# normal MEAN SD`");
        }
        params.push_back({args[0], p, line_no});
      } else if (key == "@discrete") {
        if (args.empty() || args[0] != "d#") directive_error(line_no, "expected `@discrete d# v1 v2 ...`");
        for (std::size_t i = 1; i < args.size(); ++i) {
          auto v = parse_rational(args[i]);
          if (!v) directive_error(line_no, "invalid rational `" + args[i] + "`");
          if (std::find(support.begin(), support.end(), *v) == support.end()) support.push_back(*v);
        }
        if (support.empty()) directive_error(line_no, "@discrete needs at least one value");
      } else if (key == "@tie") {
        if (args.size() != 2) directive_error(line_no, "expected `@tie m# SCOPE`");
        tie_lines.emplace_back(args[0], args[1]);
      } else {
        directive_error(line_no, "unknown directive `" + key + "`");
      }
    } else {
      body.append(line);
    }
    body += '\n';
    start = end + 1;
  }

  Prte root = parse_prte(body, *alphabet, !explicit_alphabet);
  PriorSpec prior = make_prior(alphabet, std::move(root), max_depth);
  prior.name = name;
  prior.explicit_alphabet = explicit_alphabet;
  prior.theta_d_support = std::move(support);
  for (const auto& p : params) {
    if (p.marker.size() < 2 || p.marker.back() != '#' || p.marker == "d#") {
      directive_error(p.line, "`" + p.marker + "` is not a continuous marker");
    }
    prior.marker_priors[alphabet->add(p.marker, 0)] = p.prior;
  }
  for (const auto& [marker, scope] : tie_lines) {
    if (marker.size() < 2 || marker.back() != '#' || marker == "d#") {
      throw SyntaxError(ErrorCode::SyntaxError, 0, 0, "@tie needs a continuous marker, got `" + marker + "`");
    }
    prior.ties.push_back(TieRule{alphabet->add(marker, 0), scope});
  }
  return prior;
}

std::string format_prior(const PriorSpec& prior) {
  std::string out;
  if (!prior.name.empty()) out += "@name " + prior.name + "\n";
  out += "@max_depth " + std::to_string(prior.max_depth) + "\n";
  const Alphabet& alpha = *prior.alphabet;
  if (prior.explicit_alphabet) {
    out += "@alphabet";
    for (SymbolId id = Alphabet::kHole + 1; id < alpha.size(); ++id) {
      out += ' ' + alpha[id].name + '/' + std::to_string(alpha[id].rank);
    }
    out += '\n';
  }
  std::vector<std::pair<std::string, ParamPrior>> params;
  for (const auto& [id, p] : prior.marker_priors) params.emplace_back(alpha[id].name, p);
  std::sort(params.begin(), params.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [marker, p] : params) {
    if (p.family == ParamPrior::Family::Exponential) {
      out += "@param " + marker + " exponential " + format_double(p.a) + "\n";
    } else {
      out += "@param " + marker + " normal " + format_double(p.a) + " " + format_double(p.b) + "\n";
    }
  }
  if (!prior.theta_d_support.empty()) {
    out += "@discrete d#";
    for (const auto& v : prior.theta_d_support) out += ' ' + format_fraction(v);
    out += '\n';
  }
  for (const auto& t : prior.ties) out += "@tie " + alpha[t.marker].name + " " + t.scope + "\n";
  out += format_prte(prior.root, alpha);
  out += '\n';
  return out;
}

}  // namespace treegress
