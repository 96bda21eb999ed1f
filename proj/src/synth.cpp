// SPDX-License-Identifier: Apache-2.0
#include "iag/synth.hpp"

#include <random>

#include "iag/util.hpp"

namespace iag {

namespace {

constexpr int kFillerWords = 24;

std::string ent_name(int i) { return "ent" + std::to_string(i); }
std::string hyp_name(int i) { return "hyp" + std::to_string(i); }
std::string prop_name(int i) { return "prop" + std::to_string(i); }
std::string fill_name(int i) { return "fill" + std::to_string(i); }

}  // namespace

void SynthSpec::validate() const {
  if (n_hypernyms < 1) throw ConfigError("synth: n_hypernyms must be >= 1");
  if (n_entities < n_hypernyms) throw ConfigError("synth: n_entities must be >= n_hypernyms");
  if (n_properties < 1) throw ConfigError("synth: n_properties must be >= 1");
  if (analogs_per_entity < 0) throw ConfigError("synth: analogs_per_entity must be >= 0");
  if (distractor_docs < 0) throw ConfigError("synth: distractor_docs must be >= 0");
  if (gold_doc_rate < 0.0 || gold_doc_rate > 1.0) throw ConfigError("synth: gold_doc_rate not in [0,1]");
  if (teacher_noise_rate < 0.0 || teacher_noise_rate > 1.0) {
    throw ConfigError("synth: teacher_noise_rate not in [0,1]");
  }
  // Analogs come from the same hypernym group, so every group needs enough members.
  if ((n_entities + n_hypernyms - 1) / n_hypernyms < 1 ||
      n_entities / n_hypernyms < analogs_per_entity + 1) {
    throw ConfigError("synth: each hypernym group needs at least analogs_per_entity+1 entities");
  }
}

SynthOutput synth_generate(const SynthSpec& spec) {
  spec.validate();
  SynthOutput out;

  // Entities round-robin over hypernym groups keeps group sizes balanced.
  std::vector<std::vector<int>> groups(static_cast<size_t>(spec.n_hypernyms));
  for (int e = 0; e < spec.n_entities; ++e) {
    groups[static_cast<size_t>(e % spec.n_hypernyms)].push_back(e);
  }
  for (int h = 0; h < spec.n_hypernyms; ++h) out.hypernyms.push_back(hyp_name(h));
  for (int e = 0; e < spec.n_entities; ++e) {
    out.entity_hypernym[ent_name(e)] = hyp_name(e % spec.n_hypernyms);
  }

  std::mt19937_64 table_rng(mix_seed(spec.seed, "property-table"));
  for (int h = 0; h < spec.n_hypernyms; ++h) {
    for (int p = 0; p < spec.n_properties; ++p) {
      out.property_table[hyp_name(h)][prop_name(p)] = (table_rng() & 1) != 0;
    }
  }

  // Documentation is decided per fact, not per question: a (hypernym,
  // property) fact is either written down in the corpus or entirely implicit.
  // Otherwise analog entities' gold passages would leak every fact into
  // retrieval and the implicit-reasoning regime would vanish at mid rates.
  std::mt19937_64 fact_rng(mix_seed(spec.seed, "documented-facts"));
  std::uniform_real_distribution<double> fact_unif(0.0, 1.0);
  std::map<std::pair<int, int>, bool> documented;
  for (int h = 0; h < spec.n_hypernyms; ++h) {
    for (int p = 0; p < spec.n_properties; ++p) {
      documented[{h, p}] = fact_unif(fact_rng) < spec.gold_doc_rate;
    }
  }

  std::mt19937_64 doc_rng(mix_seed(spec.seed, "documents"));
  std::mt19937_64 noise_rng(mix_seed(spec.seed, "teacher-noise"));
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  int qcount = 0;
  for (int e = 0; e < spec.n_entities; ++e) {
    const std::string entity = ent_name(e);
    const int h = e % spec.n_hypernyms;
    const std::string hyper = hyp_name(h);
    const auto& group = groups[static_cast<size_t>(h)];

    // Analogs: the next entities within the same group, cyclically.
    std::vector<std::string> analogs;
    size_t self_pos = 0;
    for (size_t i = 0; i < group.size(); ++i) {
      if (group[i] == e) self_pos = i;
    }
    for (int k = 1; k <= spec.analogs_per_entity; ++k) {
      analogs.push_back(ent_name(group[(self_pos + static_cast<size_t>(k)) % group.size()]));
    }

    for (int p = 0; p < spec.n_properties; ++p) {
      const std::string prop = prop_name(p);
      const bool holds = out.property_table[hyper][prop];
      QAExample ex;
      ex.qid = "q" + std::to_string(qcount++);
      ex.question = "is " + entity + " " + prop + "?";
      ex.answer = holds ? Label::yes : Label::no;

      // Distractors mention the entity but carry no hypernym or property signal.
      for (int d = 0; d < spec.distractor_docs; ++d) {
        Document doc;
        doc.doc_id = ex.qid + "_d" + std::to_string(d);
        int f1 = static_cast<int>(doc_rng() % kFillerWords);
        int f2 = static_cast<int>(doc_rng() % kFillerWords);
        doc.text = entity + " appears with " + fill_name(f1) + " in " + fill_name(f2) + ".";
        out.corpus.push_back(std::move(doc));
      }
      auto inductive_text = [&](const std::string& hyp, bool positive) {
        std::string first = entity;
        for (const auto& a : analogs) first += ", " + a;
        return first + " are " + hyp + ". " + hyp + (positive ? " are " : " are not ") + prop + ".";
      };

      // Gold passages use the exact inductive statement phrasing, so retrieved
      // evidence and knowledge statements form one text distribution.
      if (documented.at({h, p})) {
        Document doc;
        doc.doc_id = ex.qid + "_g";
        doc.text = inductive_text(hyper, holds);
        ex.facts.push_back(doc.text);
        out.corpus.push_back(std::move(doc));
      }

      std::string stmt_hyper = hyper;
      bool stmt_holds = holds;
      if (unif(noise_rng) < spec.teacher_noise_rate) {
        if ((noise_rng() & 1) != 0) {
          stmt_holds = !stmt_holds;
        } else if (spec.n_hypernyms > 1) {
          int other = static_cast<int>(noise_rng() % static_cast<std::uint64_t>(spec.n_hypernyms - 1));
          if (other >= h) ++other;
          stmt_hyper = hyp_name(other);
        } else {
          stmt_holds = !stmt_holds;
        }
      }
      KnowledgeStatement ks;
      ks.text = inductive_text(stmt_hyper, stmt_holds);
      ks.source = StatementSource::gold;
      out.teacher_table[ex.qid] = std::move(ks);
      out.dataset.push_back(std::move(ex));
    }
  }
  return out;
}

void synth_check_label_consistency(const SynthOutput& out) {
  for (const auto& ex : out.dataset) {
    auto words = ex.question;
    // question shape: "is <entity> <prop>?"
    auto sp1 = words.find(' ');
    auto sp2 = words.find(' ', sp1 + 1);
    std::string entity = words.substr(sp1 + 1, sp2 - sp1 - 1);
    std::string prop = words.substr(sp2 + 1);
    if (!prop.empty() && prop.back() == '?') prop.pop_back();
    const auto& hyper = out.entity_hypernym.at(entity);
    bool holds = out.property_table.at(hyper).at(prop);
    if ((holds ? Label::yes : Label::no) != ex.answer) {
      throw StageError("synth label inconsistency at qid " + ex.qid);
    }
  }
}

}  // namespace iag
