#include "treegress/tree.hpp"

#include "treegress/error.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace treegress {

namespace {

constexpr std::string_view kReservedChars = " \t\r\n(),{}:;$";

SymbolKind classify(std::string_view name, unsigned rank) {
  if (rank > 0) return SymbolKind::Operator;
  if (name == "?") return SymbolKind::Hole;
  if (name == "d#") return SymbolKind::DiscMarker;
  if (name.size() > 1 && name.back() == '#') return SymbolKind::ConstMarker;
  if (parse_rational(name)) return SymbolKind::Literal;
  return SymbolKind::Variable;
}

}  // namespace

Alphabet::Alphabet() {
  insert("c#", 0);
  insert("d#", 0);
  insert("?", 0);
}

SymbolId Alphabet::insert(std::string_view name, unsigned rank) {
  RankedSymbol sym;
  sym.name = std::string(name);
  sym.rank = rank;
  sym.kind = classify(name, rank);
  if (sym.kind == SymbolKind::Literal) {
    sym.literal_exact = parse_rational(name);
    sym.literal = to_double(*sym.literal_exact);
  }
  const auto id = static_cast<SymbolId>(symbols_.size());
  symbols_.push_back(std::move(sym));
  index_.emplace(std::make_pair(std::string(name), rank), id);
  return id;
}

SymbolId Alphabet::add(std::string_view name, unsigned rank) {
  if (name == "?") throw Error(ErrorCode::UnknownSymbol, "`?` is reserved for context holes");
  if (auto existing = find(name, rank)) return *existing;
  if (name.empty()) throw Error(ErrorCode::UnknownSymbol, "empty symbol name");
  if (name.find_first_of(kReservedChars) != std::string_view::npos) {
    throw Error(ErrorCode::UnknownSymbol, "invalid character in symbol name `" + std::string(name) + "`");
  }
  if (name.back() == '#' && rank > 0) {
    throw Error(ErrorCode::ArityMismatch, "marker `" + std::string(name) + "` must have rank 0");
  }
  if (rank == 0 && name.find('.') != std::string_view::npos && !parse_rational(name)) {
    throw Error(ErrorCode::UnknownSymbol, "`.` only allowed in numeric literals: `" + std::string(name) + "`");
  }
  if (rank > 0 && parse_rational(name)) {
    throw Error(ErrorCode::ArityMismatch, "numeric literal `" + std::string(name) + "` must have rank 0");
  }
  return insert(name, rank);
}

std::optional<SymbolId> Alphabet::find(std::string_view name, unsigned rank) const {
  auto it = index_.find(std::make_pair(std::string(name), rank));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Alphabet::has_name(std::string_view name) const {
  return std::any_of(symbols_.begin(), symbols_.end(),
                     [&](const RankedSymbol& s) { return s.name == name; });
}

std::vector<std::string> Alphabet::variable_names() const {
  std::vector<std::string> names;
  for (const auto& s : symbols_) {
    if (s.kind == SymbolKind::Variable) names.push_back(s.name);
  }
  std::sort(names.begin(), names.end());
  return names;
}

bool operator==(const Alphabet& a, const Alphabet& b) {
  if (a.symbols_.size() != b.symbols_.size()) return false;
  for (std::size_t i = 0; i < a.symbols_.size(); ++i) {
    if (a.symbols_[i].name != b.symbols_[i].name || a.symbols_[i].rank != b.symbols_[i].rank) return false;
  }
  return true;
}

std::string format_address(const Address& address) {
  if (address.empty()) return "ε";
  std::string out;
  for (std::size_t i = 0; i < address.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(address[i]);
  }
  return out;
}

std::size_t Tree::size() const {
  std::size_t n = 1;
  for (const auto& c : children) n += c.size();
  return n;
}

std::size_t Tree::depth() const {
  std::size_t d = 0;
  for (const auto& c : children) d = std::max(d, c.depth() + 1);
  return d;
}

const Tree& Tree::at(const Address& address) const {
  const Tree* node = this;
  for (unsigned idx : address) {
    if (idx == 0 || idx > node->children.size()) {
      throw std::out_of_range("address " + format_address(address) + " not in tree");
    }
    node = &node->children[idx - 1];
  }
  return *node;
}

Tree Tree::with_subtree(const Address& address, Tree replacement) const {
  Tree copy = *this;
  Tree* node = &copy;
  for (unsigned idx : address) {
    if (idx == 0 || idx > node->children.size()) {
      throw std::out_of_range("address " + format_address(address) + " not in tree");
    }
    node = &node->children[idx - 1];
  }
  *node = std::move(replacement);
  return copy;
}

std::strong_ordering operator<=>(const Tree& a, const Tree& b) {
  if (auto c = a.symbol <=> b.symbol; c != 0) return c;
  return std::lexicographical_compare_three_way(a.children.begin(), a.children.end(), b.children.begin(),
                                                b.children.end());
}

namespace {

void collect_addresses(const Tree& t, Address& prefix, std::vector<Address>& out) {
  out.push_back(prefix);
  for (std::size_t i = 0; i < t.children.size(); ++i) {
    prefix.push_back(static_cast<unsigned>(i + 1));
    collect_addresses(t.children[i], prefix, out);
    prefix.pop_back();
  }
}

void collect_positions(const Tree& t, SymbolId symbol, Address& prefix, std::vector<Address>& out) {
  if (t.symbol == symbol) out.push_back(prefix);
  for (std::size_t i = 0; i < t.children.size(); ++i) {
    prefix.push_back(static_cast<unsigned>(i + 1));
    collect_positions(t.children[i], symbol, prefix, out);
    prefix.pop_back();
  }
}

}  // namespace

std::vector<Address> Tree::addresses() const {
  std::vector<Address> out;
  Address prefix;
  collect_addresses(*this, prefix, out);
  return out;
}

std::vector<Address> positions_of(const Tree& tree, SymbolId symbol) {
  std::vector<Address> out;
  Address prefix;
  collect_positions(tree, symbol, prefix, out);
  return out;
}

Tree validate_tree(const std::map<Address, std::string>& candidate, const Alphabet& alphabet) {
  if (candidate.empty()) throw Error(ErrorCode::NotPrefixClosed, "tree has no nodes");
  for (const auto& [addr, name] : candidate) {
    for (unsigned idx : addr) {
      if (idx == 0) throw Error(ErrorCode::NotPrefixClosed, "child indices are 1-based");
    }
    if (addr.empty()) continue;
    Address parent(addr.begin(), addr.end() - 1);
    if (!candidate.contains(parent)) {
      throw Error(ErrorCode::NotPrefixClosed, "address " + format_address(addr) + " has no parent");
    }
  }

  // Children of x are the keys x.j; the map's ordering keeps them contiguous after x.
  std::map<Address, std::vector<unsigned>> child_indices;
  for (const auto& [addr, name] : candidate) {
    if (addr.empty()) continue;
    Address parent(addr.begin(), addr.end() - 1);
    child_indices[parent].push_back(addr.back());
  }

  std::map<Address, SymbolId> resolved;
  for (const auto& [addr, name] : candidate) {
    const auto& kids = child_indices[addr];
    const auto count = static_cast<unsigned>(kids.size());
    for (unsigned j = 0; j < count; ++j) {
      if (kids[j] != j + 1) {
        throw Error(ErrorCode::ArityMismatch,
                    "children of " + format_address(addr) + " are not exactly 1.." + std::to_string(count));
      }
    }
    if (auto id = alphabet.find(name, count)) {
      resolved[addr] = *id;
    } else if (alphabet.has_name(name)) {
      throw Error(ErrorCode::ArityMismatch, "symbol `" + name + "` at " + format_address(addr) + " has " +
                                                std::to_string(count) + " children, which matches none of its ranks");
    } else {
      throw Error(ErrorCode::UnknownSymbol, "`" + name + "` at " + format_address(addr));
    }
  }

  // Assemble bottom-up: reverse lexicographic order visits children before parents.
  std::map<Address, Tree> built;
  for (auto it = resolved.rbegin(); it != resolved.rend(); ++it) {
    const auto& [addr, id] = *it;
    Tree node(id);
    const unsigned rank = alphabet[id].rank;
    for (unsigned j = 1; j <= rank; ++j) {
      Address child = addr;
      child.push_back(j);
      node.children.push_back(std::move(built.at(child)));
      built.erase(child);
    }
    built[addr] = std::move(node);
  }
  return std::move(built.at(Address{}));
}

std::string to_text(const Tree& tree, const Alphabet& alphabet) {
  const auto& name = alphabet[tree.symbol].name;
  if (tree.children.empty()) return name;
  std::string out = "(" + name;
  for (const auto& c : tree.children) {
    out += ' ';
    out += to_text(c, alphabet);
  }
  out += ')';
  return out;
}

namespace {

class TreeTextParser {
 public:
  TreeTextParser(std::string_view text, Alphabet* mutable_alphabet, const Alphabet& alphabet)
      : text_(text), mutable_(mutable_alphabet), alphabet_(alphabet) {}

  Tree parse() {
    skip_space();
    Tree t = parse_node();
    skip_space();
    if (pos_ != text_.size()) fail("trailing input");
    return t;
  }

 private:
  [[noreturn]] void fail(const std::string& message) const {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) {
      if (text_[i] == '\n') { ++line; col = 1; } else { ++col; }
    }
    throw SyntaxError(ErrorCode::SyntaxError, line, col, message);
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string_view atom() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '(' &&
           text_[pos_] != ')') {
      ++pos_;
    }
    if (start == pos_) fail("expected a symbol");
    return text_.substr(start, pos_ - start);
  }

  SymbolId resolve(std::string_view name, unsigned rank) {
    if (mutable_) return mutable_->add(name, rank);
    if (auto id = alphabet_.find(name, rank)) return *id;
    if (alphabet_.has_name(name)) {
      throw Error(ErrorCode::ArityMismatch,
                  "symbol `" + std::string(name) + "` used with " + std::to_string(rank) + " children");
    }
    throw Error(ErrorCode::UnknownSymbol, "`" + std::string(name) + "`");
  }

  Tree parse_node() {
    if (pos_ >= text_.size()) fail("unexpected end of input");
    if (text_[pos_] == ')') fail("unexpected `)`");
    if (text_[pos_] != '(') {
      const auto name = atom();
      return Tree(resolve(name, 0));
    }
    ++pos_;
    skip_space();
    const auto name = atom();
    std::vector<Tree> children;
    for (;;) {
      skip_space();
      if (pos_ >= text_.size()) fail("missing `)`");
      if (text_[pos_] == ')') { ++pos_; break; }
      children.push_back(parse_node());
    }
    if (children.empty()) fail("`(` must be followed by an operator and at least one argument");
    const SymbolId id = resolve(name, static_cast<unsigned>(children.size()));
    return Tree(id, std::move(children));
  }

  std::string_view text_;
  Alphabet* mutable_;
  const Alphabet& alphabet_;
  std::size_t pos_ = 0;
};

}  // namespace

Tree parse_tree(std::string_view text, const Alphabet& alphabet) {
  return TreeTextParser(text, nullptr, alphabet).parse();
}

Tree parse_tree_extending(std::string_view text, Alphabet& alphabet) {
  return TreeTextParser(text, &alphabet, alphabet).parse();
}

}  // namespace treegress
