#pragma once

#include <span>
#include <vector>

#include "bprobe/common.hpp"
#include "bprobe/tokenizer.hpp"

namespace bprobe {

// One prompt position: either a vocabulary token or a free embedding vector.
struct Slot {
  int token = -1;  // >= 0 when discrete
  Vec vec;         // d_model entries when continuous

  bool discrete() const { return token >= 0; }

  static Slot from_token(int id) {
    Slot s;
    s.token = id;
    return s;
  }
  static Slot from_vec(Vec v) {
    Slot s;
    s.vec = std::move(v);
    return s;
  }
};

struct PromptState {
  std::vector<Slot> slots;
  tinylm::TokenSeq origin_question;

  int size() const { return static_cast<int>(slots.size()); }

  static PromptState from_ids(std::span<const int> ids) {
    PromptState p;
    p.slots.reserve(ids.size());
    for (int id : ids) p.slots.push_back(Slot::from_token(id));
    p.origin_question.ids.assign(ids.begin(), ids.end());
    return p;
  }

  // Discrete slots read their row of W; continuous slots carry their vector.
  Mat materialize(const Mat& embedding) const {
    Mat x(size(), embedding.cols());
    for (int i = 0; i < size(); ++i) {
      if (slots[i].discrete()) {
        x.row(i) = embedding.row(slots[i].token);
      } else {
        x.row(i) = slots[i].vec.transpose();
      }
    }
    return x;
  }

  bool fully_discrete() const {
    for (const auto& s : slots)
      if (!s.discrete()) return false;
    return true;
  }

  std::vector<int> token_ids_or(int fallback = -1) const {
    std::vector<int> ids;
    ids.reserve(slots.size());
    for (const auto& s : slots) ids.push_back(s.discrete() ? s.token : fallback);
    return ids;
  }
};

}  // namespace bprobe
