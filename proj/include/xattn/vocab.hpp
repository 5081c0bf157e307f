#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xattn {

// The two synthetic domains standing in for modalities.
enum class Domain : uint8_t { kA = 0, kB = 1 };

inline const char* domain_name(Domain d) { return d == Domain::kA ? "A" : "B"; }
Domain domain_from_name(std::string_view s);

enum class TokenClass : uint8_t {
  kControl = 0,
  kQuestionName,  // shared entity references used inside questions
  kDomainA,
  kDomainB,
  kValue,  // shared answer values
};

// Symbol table partitioned into shared control tokens, two disjoint domain
// alphabets, a shared question-name alphabet, and shared answer values.
// Layout is purely a function of (name_tokens, n_values).
class Vocab {
 public:
  Vocab() = default;
  Vocab(int name_tokens, int n_values);

  int size() const { return static_cast<int>(symbols_.size()); }
  TokenClass class_of(int id) const;
  const std::string& symbol(int id) const;
  int id(std::string_view symbol) const;  // throws on unknown symbol

  int pad() const { return 0; }
  int bos() const { return 1; }
  int eos() const { return 2; }
  int sep() const { return 3; }
  int ctx() const { return 4; }
  int ques() const { return 5; }
  int ans() const { return 6; }
  int instruct() const { return 7; }
  int same_q() const { return 8; }
  int reply_both() const { return 9; }
  int conflict() const { return 10; }
  int yes() const { return 11; }
  int no() const { return 12; }
  static constexpr int kNumControl = 13;

  int name_tokens() const { return name_tokens_; }
  int n_values() const { return n_values_; }

  int q_name(int i) const;
  int a_name(int i) const;
  int b_name(int i) const;
  int name_in(Domain d, int i) const { return d == Domain::kA ? a_name(i) : b_name(i); }
  int a_copula() const;
  int b_copula() const;
  int copula_in(Domain d) const { return d == Domain::kA ? a_copula() : b_copula(); }
  int value(int i) const;

  // Inverse lookups; -1 when the token is not in the partition.
  int value_index(int id) const;
  int name_index(int id) const;  // within its alphabet

  std::vector<std::string> to_symbols(const std::vector<int>& ids) const;
  std::vector<int> to_ids(const std::vector<std::string>& symbols) const;

 private:
  void add(const std::string& symbol, TokenClass cls);
  int checked(int i, int limit, const char* what) const;

  int name_tokens_ = 0;
  int n_values_ = 0;
  std::vector<std::string> symbols_;
  std::vector<TokenClass> classes_;
  std::unordered_map<std::string, int> by_symbol_;
};

}  // namespace xattn
