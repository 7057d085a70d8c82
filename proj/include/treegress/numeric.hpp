#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <optional>
#include <string>
#include <string_view>

namespace treegress {

using Rational = boost::multiprecision::cpp_rational;

/// Parses `12`, `-0.25`, `3/4` or `-2/3` exactly. Returns nullopt for anything else.
std::optional<Rational> parse_rational(std::string_view text);

/// Finite decimal when the denominator only has factors 2 and 5, `p/q` otherwise.
std::string format_rational(const Rational& value);

/// Always `p/q` (or `p` for integers).
std::string format_fraction(const Rational& value);

double to_double(const Rational& value);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

}  // namespace treegress
