#pragma once

#include "treegress/numeric.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace treegress {

using SymbolId = std::uint32_t;

/// What a symbol means when an expression is evaluated. Derived from the
/// symbol's name and rank when it is added to an alphabet.
enum class SymbolKind {
  Operator,     // rank > 0: + - * / pow
  Variable,     // rank 0, bound to a data column by name
  Literal,      // rank 0, name parses as a number (`1`, `-2/3`, `0.5`)
  ConstMarker,  // rank 0, name ends in `#` (`c#`, `sT#`, ...): binds a continuous parameter
  DiscMarker,   // `d#`: binds a discrete (rational) parameter
  Hole,         // `?`: reserved context hole, never part of a user alphabet
};

struct RankedSymbol {
  std::string name;
  unsigned rank = 0;
  SymbolKind kind = SymbolKind::Variable;
  double literal = 0.0;  // value of Literal symbols
  std::optional<Rational> literal_exact;
};

/// Finite ranked alphabet. Symbols are keyed by (name, rank), so `+`/2 and
/// `+`/3 may coexist. The markers `c#`, `d#` and the hole `?` are always present.
class Alphabet {
 public:
  static constexpr SymbolId kConstMarker = 0;
  static constexpr SymbolId kDiscMarker = 1;
  static constexpr SymbolId kHole = 2;

  Alphabet();

  /// Adds a symbol (or returns the existing id). Rejects `?` and invalid names.
  SymbolId add(std::string_view name, unsigned rank);
  std::optional<SymbolId> find(std::string_view name, unsigned rank) const;
  bool has_name(std::string_view name) const;

  const RankedSymbol& operator[](SymbolId id) const { return symbols_.at(id); }
  std::size_t size() const { return symbols_.size(); }
  const std::vector<RankedSymbol>& symbols() const { return symbols_; }

  bool is_const_marker(SymbolId id) const { return symbols_.at(id).kind == SymbolKind::ConstMarker; }
  bool is_disc_marker(SymbolId id) const { return symbols_.at(id).kind == SymbolKind::DiscMarker; }

  /// Names of Variable symbols, sorted.
  std::vector<std::string> variable_names() const;

  friend bool operator==(const Alphabet& a, const Alphabet& b);

 private:
  SymbolId insert(std::string_view name, unsigned rank);

  std::vector<RankedSymbol> symbols_;
  std::map<std::pair<std::string, unsigned>, SymbolId, std::less<>> index_;
};

/// Gorn address: 1-based child indices from the root; empty = root.
using Address = std::vector<unsigned>;

std::string format_address(const Address& address);

/// Finite ranked tree as a recursive value. Gorn addresses are derived on demand.
struct Tree {
  SymbolId symbol = 0;
  std::vector<Tree> children;

  Tree() = default;
  explicit Tree(SymbolId s, std::vector<Tree> cs = {}) : symbol(s), children(std::move(cs)) {}

  std::size_t size() const;
  /// Number of edges on the longest root-to-leaf path (a leaf has depth 0).
  std::size_t depth() const;
  bool is_leaf() const { return children.empty(); }

  /// Throws std::out_of_range for addresses not in the tree.
  const Tree& at(const Address& address) const;
  Tree with_subtree(const Address& address, Tree replacement) const;

  /// All node addresses in pre-order.
  std::vector<Address> addresses() const;

  friend bool operator==(const Tree&, const Tree&) = default;
  friend std::strong_ordering operator<=>(const Tree& a, const Tree& b);
};

/// Builds a tree from an explicit address -> symbol-name map, checking the
/// tree axioms. Ranks are resolved by the number of children present.
/// Throws Error{NotPrefixClosed | ArityMismatch | UnknownSymbol}.
Tree validate_tree(const std::map<Address, std::string>& candidate, const Alphabet& alphabet);

/// Pre-order addresses labeled with `symbol`.
std::vector<Address> positions_of(const Tree& tree, SymbolId symbol);

/// Calls `visit` on every node, root first, children left to right.
template <class Visit>
void for_each_preorder(const Tree& tree, Visit&& visit) {
  visit(tree);
  for (const auto& c : tree.children) for_each_preorder(c, visit);
}

/// Parenthesized prefix text: `a` or `(f a (g b))`.
std::string to_text(const Tree& tree, const Alphabet& alphabet);

/// Parses prefix text against `alphabet`. Symbols are resolved by name and
/// child count. Throws SyntaxError, or Error{UnknownSymbol | ArityMismatch}.
Tree parse_tree(std::string_view text, const Alphabet& alphabet);

/// Like parse_tree but adds unseen symbols to `alphabet`.
Tree parse_tree_extending(std::string_view text, Alphabet& alphabet);

}  // namespace treegress
