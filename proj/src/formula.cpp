#include "hanova/formula.hpp"

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>

#include "hanova/error.hpp"

namespace hanova {

std::string Term::label() const {
    std::string out;
    for (std::size_t i = 0; i < factors.size(); ++i) {
        if (i > 0) out += ':';
        out += factors[i];
    }
    return out;
}

bool Term::same_factors(const Term& other) const {
    if (factors.size() != other.factors.size()) return false;
    auto a = factors;
    auto b = other.factors;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
}

namespace {

enum class Tok { Ident, One, Tilde, Plus, Colon, Star, LParen, RParen, Equals, Semi, End };

struct Token {
    Tok kind;
    std::string text;
    std::size_t pos;
};

bool ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}
bool ident_char(char c) {
    return ident_start(c) || std::isdigit(static_cast<unsigned char>(c));
}

std::string describe(const Token& t) {
    switch (t.kind) {
        case Tok::End: return "end of input";
        case Tok::Ident: return "'" + t.text + "'";
        default: return "'" + t.text + "'";
    }
}

class Lexer {
public:
    explicit Lexer(std::string_view text) : text_(text) {}

    std::vector<Token> run() {
        std::vector<Token> out;
        std::size_t i = 0;
        while (i < text_.size()) {
            const char c = text_[i];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
                continue;
            }
            if (ident_start(c)) {
                std::size_t j = i;
                while (j < text_.size() && ident_char(text_[j])) ++j;
                out.push_back({Tok::Ident, std::string(text_.substr(i, j - i)), i});
                i = j;
                continue;
            }
            Tok kind;
            switch (c) {
                case '1': kind = Tok::One; break;
                case '~': kind = Tok::Tilde; break;
                case '+': kind = Tok::Plus; break;
                case ':': kind = Tok::Colon; break;
                case '*': kind = Tok::Star; break;
                case '(': kind = Tok::LParen; break;
                case ')': kind = Tok::RParen; break;
                case '=': kind = Tok::Equals; break;
                case ';': kind = Tok::Semi; break;
                default: {
                    std::string shown = std::isprint(static_cast<unsigned char>(c))
                                            ? std::string("'") + c + "'"
                                            : "byte " + std::to_string(static_cast<unsigned char>(c));
                    throw SyntaxError(i, "a factor name or operator", shown);
                }
            }
            out.push_back({kind, std::string(1, c), i});
            ++i;
        }
        out.push_back({Tok::End, "", text_.size()});
        return out;
    }

private:
    std::string_view text_;
};

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    ModelSpec model() {
        ModelSpec spec;
        spec.response = expect(Tok::Ident, "a response name").text;
        expect(Tok::Tilde, "'~'");
        rhs(spec);
        while (peek().kind == Tok::Semi) {
            advance();
            spec.aliases.push_back(alias());
        }
        expect(Tok::End, "'+', ';' or end of input");
        return spec;
    }

    AliasDecl bare_alias() {
        AliasDecl decl = alias_body();
        expect(Tok::End, "end of input");
        return decl;
    }

private:
    struct Literal {
        Term term;
        bool from_star;
    };

    const Token& peek() const { return toks_[at_]; }
    const Token& advance() { return toks_[at_++]; }

    const Token& expect(Tok kind, const char* what) {
        if (peek().kind != kind) throw SyntaxError(peek().pos, what, describe(peek()));
        return advance();
    }

    void rhs(ModelSpec& spec) {
        if (peek().kind == Tok::One) {
            advance();
            return;
        }
        std::vector<Literal> literal;
        item(literal);
        while (peek().kind == Tok::Plus) {
            advance();
            item(literal);
        }
        for (std::size_t i = 0; i < literal.size(); ++i) {
            const Literal& lit = literal[i];
            auto it = std::find_if(spec.terms.begin(), spec.terms.end(),
                                   [&](const Term& t) { return t.same_factors(lit.term); });
            if (it == spec.terms.end()) {
                spec.terms.push_back(lit.term);
                continue;
            }
            // Only a term written out twice is an error; star expansion may overlap freely.
            if (!lit.from_star) {
                for (std::size_t j = 0; j < i; ++j)
                    if (!literal[j].from_star && literal[j].term.same_factors(lit.term))
                        throw DuplicateTerm(lit.term.label());
            }
            if (lit.term.explicit_residual) it->explicit_residual = true;
        }
    }

    void item(std::vector<Literal>& out) {
        if (peek().kind == Tok::Ident && peek().text == "error" &&
            toks_[at_ + 1].kind == Tok::LParen) {
            advance();
            advance();
            Term t = interaction();
            t.explicit_residual = true;
            expect(Tok::RParen, "')'");
            out.push_back({std::move(t), false});
            return;
        }
        std::vector<Term> operands{interaction()};
        while (peek().kind == Tok::Star) {
            advance();
            operands.push_back(interaction());
        }
        if (operands.size() == 1) {
            out.push_back({std::move(operands.front()), false});
            return;
        }
        expand_star(operands, out);
    }

    static void expand_star(const std::vector<Term>& operands, std::vector<Literal>& out) {
        const std::size_t k = operands.size();
        // Subsets by size, then lexicographically by operand position.
        for (std::size_t size = 1; size <= k; ++size) {
            std::vector<std::size_t> idx(size);
            for (std::size_t i = 0; i < size; ++i) idx[i] = i;
            while (true) {
                Term t;
                for (std::size_t i : idx)
                    for (const auto& f : operands[i].factors)
                        if (std::find(t.factors.begin(), t.factors.end(), f) == t.factors.end())
                            t.factors.push_back(f);
                out.push_back({std::move(t), true});
                std::size_t pos = size;
                while (pos > 0 && idx[pos - 1] == k - size + pos - 1) --pos;
                if (pos == 0) break;
                ++idx[pos - 1];
                for (std::size_t i = pos; i < size; ++i) idx[i] = idx[i - 1] + 1;
            }
        }
    }

    Term interaction() {
        Term t;
        t.factors.push_back(expect(Tok::Ident, "a factor name").text);
        while (peek().kind == Tok::Colon) {
            advance();
            const Token& name = expect(Tok::Ident, "a factor name");
            if (std::find(t.factors.begin(), t.factors.end(), name.text) != t.factors.end())
                throw SyntaxError(name.pos, "a factor not already in the term", describe(name));
            t.factors.push_back(name.text);
        }
        return t;
    }

    AliasDecl alias() {
        const Token& kw = expect(Tok::Ident, "'alias'");
        if (kw.text != "alias") throw SyntaxError(kw.pos, "'alias'", describe(kw));
        expect(Tok::LParen, "'('");
        AliasDecl decl = alias_body();
        expect(Tok::RParen, "')'");
        return decl;
    }

    AliasDecl alias_body() {
        AliasDecl decl;
        decl.coarse = interaction();
        expect(Tok::Equals, "'='");
        decl.fine = interaction();
        return decl;
    }

    std::vector<Token> toks_;
    std::size_t at_ = 0;
};

bool blank(std::string_view text) {
    return std::all_of(text.begin(), text.end(),
                       [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace

ModelSpec parse_model(std::string_view text) {
    if (blank(text)) throw EmptyFormula();
    return Parser(Lexer(text).run()).model();
}

AliasDecl parse_alias(std::string_view text) {
    if (blank(text)) throw SyntaxError(0, "an alias 'coarse=fine'", "end of input");
    return Parser(Lexer(text).run()).bare_alias();
}

std::string render_model(const ModelSpec& spec) {
    std::string out = spec.response + " ~ ";
    if (spec.terms.empty()) out += "1";
    for (std::size_t i = 0; i < spec.terms.size(); ++i) {
        if (i > 0) out += " + ";
        const Term& t = spec.terms[i];
        out += t.explicit_residual ? "error(" + t.label() + ")" : t.label();
    }
    for (const auto& a : spec.aliases)
        out += "; alias(" + a.coarse.label() + " = " + a.fine.label() + ")";
    return out;
}

std::vector<std::string> referenced_factors(const ModelSpec& spec) {
    std::vector<std::string> out;
    auto add = [&](const Term& t) {
        for (const auto& f : t.factors)
            if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
    };
    for (const auto& t : spec.terms) add(t);
    for (const auto& a : spec.aliases) {
        add(a.coarse);
        add(a.fine);
    }
    return out;
}

std::vector<Term> expand_terms(const ModelSpec& spec,
                               const std::vector<std::string>& declared_factors) {
    for (const auto& f : referenced_factors(spec))
        if (std::find(declared_factors.begin(), declared_factors.end(), f) ==
            declared_factors.end())
            throw UnknownFactor(f);

    std::vector<Term> batches;
    for (const auto& t : spec.terms) {
        if (t.factors.empty()) throw InputError("term with no factors");
        for (const auto& b : batches)
            if (b.same_factors(t)) throw DuplicateTerm(t.label());
        batches.push_back(t);
    }
    return batches;
}

}  // namespace hanova
