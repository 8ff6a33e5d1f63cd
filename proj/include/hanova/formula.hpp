#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace hanova {

// One source of variation: the interaction of a nonempty set of factors.
struct Term {
    std::vector<std::string> factors;  // source order, no repeats
    bool explicit_residual = false;    // written as error(...)

    std::string label() const;  // "a:b:c"
    bool same_factors(const Term& other) const;
    bool operator==(const Term&) const = default;
};

// Declares that every cell of `fine` lies inside one cell of `coarse`,
// e.g. alias(trt = row:col) for a Latin square.
struct AliasDecl {
    Term coarse;
    Term fine;
    bool operator==(const AliasDecl&) const = default;
};

struct ModelSpec {
    std::string response;
    std::vector<Term> terms;
    std::vector<AliasDecl> aliases;

    bool operator==(const ModelSpec&) const = default;
};

// Grammar (whitespace insignificant):
//
//   model   := ident '~' rhs { ';' alias }
//   rhs     := '1' | item { '+' item }
//   item    := 'error' '(' inter ')' | product
//   product := inter { '*' inter }
//   inter   := ident { ':' ident }
//   alias   := 'alias' '(' inter '=' inter ')'
//   ident   := [A-Za-z_.][A-Za-z0-9_.]*
//
// `a*b*c` expands to every nonempty subset of its operands, ordered by
// subset size and then by operand position. Terms generated by `*` that
// repeat an earlier term are dropped; a repeated literal term is an error.
//
// Throws EmptyFormula, SyntaxError, DuplicateTerm.
ModelSpec parse_model(std::string_view text);

// Canonical text; parse_model(render_model(s)) == s.
std::string render_model(const ModelSpec& spec);

// Validates the term list against the available factor columns and returns
// the batches in source order (the grand mean is implicit and not listed).
// Throws UnknownFactor, DuplicateTerm.
std::vector<Term> expand_terms(const ModelSpec& spec,
                               const std::vector<std::string>& declared_factors);

// Every factor named anywhere in the model (terms and aliases), first-use order.
std::vector<std::string> referenced_factors(const ModelSpec& spec);

// Parses the CLI alias form "trt=row:col" (no alias(...) wrapper).
AliasDecl parse_alias(std::string_view text);

}  // namespace hanova
