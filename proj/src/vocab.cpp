#include "xattn/vocab.hpp"

#include <stdexcept>

namespace xattn {

Domain domain_from_name(std::string_view s) {
  if (s == "A") return Domain::kA;
  if (s == "B") return Domain::kB;
  throw std::invalid_argument("unknown domain name: " + std::string(s));
}

namespace {
std::string two_digit(int i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}
}  // namespace

Vocab::Vocab(int name_tokens, int n_values)
    : name_tokens_(name_tokens), n_values_(n_values) {
  if (name_tokens < 1 || n_values < 2) {
    throw std::invalid_argument("vocab needs at least 1 name token and 2 values");
  }
  add("<pad>", TokenClass::kControl);
  add("<bos>", TokenClass::kControl);
  add("<eos>", TokenClass::kControl);
  add("<sep>", TokenClass::kControl);
  add("<ctx>", TokenClass::kControl);
  add("<ques>", TokenClass::kControl);
  add("<ans>", TokenClass::kControl);
  add("<inst>", TokenClass::kControl);
  add("<same>", TokenClass::kControl);
  add("<both>", TokenClass::kControl);
  add("<conflict>", TokenClass::kControl);
  add("<yes>", TokenClass::kControl);
  add("<no>", TokenClass::kControl);
  for (int i = 0; i < name_tokens; ++i) add("q" + two_digit(i), TokenClass::kQuestionName);
  for (int i = 0; i < name_tokens; ++i) add("a" + two_digit(i), TokenClass::kDomainA);
  add("a_is", TokenClass::kDomainA);
  for (int i = 0; i < name_tokens; ++i) add("b" + two_digit(i), TokenClass::kDomainB);
  add("b_is", TokenClass::kDomainB);
  for (int i = 0; i < n_values; ++i) add("v" + two_digit(i), TokenClass::kValue);
}

void Vocab::add(const std::string& symbol, TokenClass cls) {
  by_symbol_.emplace(symbol, static_cast<int>(symbols_.size()));
  symbols_.push_back(symbol);
  classes_.push_back(cls);
}

TokenClass Vocab::class_of(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of range: " + std::to_string(id));
  return classes_[id];
}

const std::string& Vocab::symbol(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of range: " + std::to_string(id));
  return symbols_[id];
}

int Vocab::id(std::string_view symbol) const {
  auto it = by_symbol_.find(std::string(symbol));
  if (it == by_symbol_.end()) throw std::invalid_argument("unknown token symbol: " + std::string(symbol));
  return it->second;
}

int Vocab::checked(int i, int limit, const char* what) const {
  if (i < 0 || i >= limit) {
    throw std::out_of_range(std::string(what) + " index out of range: " + std::to_string(i));
  }
  return i;
}

int Vocab::q_name(int i) const { return kNumControl + checked(i, name_tokens_, "question name"); }
int Vocab::a_name(int i) const { return kNumControl + name_tokens_ + checked(i, name_tokens_, "domain-A name"); }
int Vocab::a_copula() const { return kNumControl + 2 * name_tokens_; }
int Vocab::b_name(int i) const { return kNumControl + 2 * name_tokens_ + 1 + checked(i, name_tokens_, "domain-B name"); }
int Vocab::b_copula() const { return kNumControl + 3 * name_tokens_ + 1; }
int Vocab::value(int i) const { return kNumControl + 3 * name_tokens_ + 2 + checked(i, n_values_, "value"); }

int Vocab::value_index(int id) const {
  const int base = kNumControl + 3 * name_tokens_ + 2;
  if (id < base || id >= base + n_values_) return -1;
  return id - base;
}

int Vocab::name_index(int id) const {
  if (id < kNumControl || id >= size()) return -1;
  switch (classes_[id]) {
    case TokenClass::kQuestionName:
      return id - kNumControl;
    case TokenClass::kDomainA: {
      const int i = id - (kNumControl + name_tokens_);
      return i < name_tokens_ ? i : -1;  // copula has no index
    }
    case TokenClass::kDomainB: {
      const int i = id - (kNumControl + 2 * name_tokens_ + 1);
      return i < name_tokens_ ? i : -1;
    }
    default:
      return -1;
  }
}

std::vector<std::string> Vocab::to_symbols(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(symbol(id));
  return out;
}

std::vector<int> Vocab::to_ids(const std::vector<std::string>& symbols) const {
  std::vector<int> out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) out.push_back(id(s));
  return out;
}

}  // namespace xattn
