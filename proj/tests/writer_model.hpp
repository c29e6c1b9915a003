#pragma once
// Reference transition model of the writer environment, shared by the unit
// tests and the acceptance run.

#include <string>
#include <vector>

#include "sage/writer_env.hpp"

namespace writer_model {

using namespace sage;

inline Sample two_doc_sample() {
    Sample s;
    s.id = "s0";
    s.question = "Where was Ann Lee born?";
    s.answer = "Oslo";
    s.docs = {make_document("d0", "Ann Lee was born in Oslo."), make_document("d1", "Oslo is a city in Norway.")};
    s.support_doc_ids = {"d0"};
    s.support_entities = {"ann lee"};
    return s;
}

// Action alphabet for the model check.
inline const std::vector<std::string> kAlphabet = {
    R"([{"subject":"Ann Lee","relation":"born in","object":"Oslo"}])",
    "[]",
    R"({"answer":"Oslo"})",
    "this is not an action",
};

// Reference transition model, written against the state machine only.
struct RefState {
    std::size_t processed = 0, remaining = 0, turn = 0, legal = 0, triples = 0;
    Flag flag = Flag::Construct;
    bool zero = false;
};

inline void ref_step(RefState& r, std::size_t a, WriteMode mode, std::size_t cap) {
    if (a == 3) {
        r.flag = Flag::Stop;
        r.zero = true;
        return;
    }
    ++r.turn;
    ++r.legal;
    if (a == 2) {
        r.flag = Flag::Rag;
        return;
    }
    if (a == 0) ++r.triples;
    if (mode == WriteMode::Iterative) {
        ++r.processed;
        --r.remaining;
    } else {
        r.processed += r.remaining;
        r.remaining = 0;
    }
    // Single mode keeps constructing until Terminate or the cap.
    if ((mode == WriteMode::Iterative && r.remaining == 0) || r.turn >= cap) r.flag = Flag::Rag;
}

}  // namespace writer_model
