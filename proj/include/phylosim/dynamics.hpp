#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "phylosim/phylogeny.hpp"
#include "phylosim/random.hpp"
#include "phylosim/rate_model.hpp"

namespace phylosim {

enum class EventKind {
  natural_death,
  competition_death,
  natural_birth_clone,
  natural_birth_mutant,
  enhanced_birth_clone,
  enhanced_birth_mutant,
};
const char* event_kind_name(EventKind kind);
bool is_death(EventKind kind);
bool is_birth(EventKind kind);

struct EventRecord {
  double time = 0.0;
  EventKind kind = EventKind::natural_death;
  ClanId clan = 0;        // clan of the particle that died or gave birth
  ClanId child_clan = 0;  // clan receiving the newborn; equals clan for deaths and clones
  double mass_after = 0.0;
};

std::string event_log_csv(const std::vector<EventRecord>& events);

// Per-particle rates: natural part beta(kappa)/zeta plus the partner-averaged
// competition field.  Exact clan sums.
double particle_death_rate(const FinitePhylogeny& chi, const RateModel& model, std::size_t clan_pos);
double particle_birth_rate(const FinitePhylogeny& chi, const RateModel& model, std::size_t clan_pos);

struct TotalRate {
  double rate = 0.0;        // death + birth over all particles
  double death_rate = 0.0;
  double birth_rate = 0.0;
  double yule_birth_cap = 0.0;  // m (beta_bar/zeta^2 + gamma_b_bar/zeta), dominates birth_rate
};
TotalRate total_event_rate(const FinitePhylogeny& chi, const RateModel& model);

// Individual-level genealogy overlay.  The clan state cannot distinguish
// clones, so ages and genealogical distances live here.  Opt-in: the clan
// dynamics never reads it.
class LineageForest {
 public:
  struct Individual {
    std::int64_t parent = -1;   // index into the forest, -1 for a time-0 root
    double birth_time = 0.0;
    long long mutations = 0;    // mutant births along the chain since the root
    ClanId clan = 0;
    std::size_t root = 0;       // index of the time-0 ancestor
    bool alive = true;
    std::size_t slot = 0;       // position inside the clan's living list
  };

  void init_roots(const FinitePhylogeny& chi);
  std::size_t size() const { return all_.size(); }
  long long living_count() const { return living_total_; }
  const Individual& individual(std::size_t idx) const { return all_[idx]; }

  std::size_t pick_member(ClanId clan, RandomStream& rng) const;
  std::size_t add_child(std::size_t parent_idx, ClanId child_clan, bool mutant, double time);
  void kill(std::size_t idx);
  const std::vector<std::size_t>& living_in(ClanId clan) const;
  // uniform over living individuals, with replacement
  std::vector<std::size_t> sample_living(std::size_t k, RandomStream& rng) const;

  double genetic_age(std::size_t idx, double zeta) const;
  // 2 (now - split time); split time is the birth of the older diverging
  // child under the deepest common ancestor, 0 for disjoint roots.
  double genealogical_distance(std::size_t a, std::size_t b, double now) const;

  struct PathInfo {
    long long mutations = 0;  // mutant edges on the forest path a .. b
    bool same_root = true;
    std::size_t root_a = 0;
    std::size_t root_b = 0;
  };
  PathInfo path_mutations(std::size_t a, std::size_t b) const;

 private:
  std::vector<Individual> all_;
  std::vector<std::vector<std::size_t>> clan_living_;  // indexed by ClanId
  long long living_total_ = 0;

  std::vector<std::size_t>& living_slot(ClanId clan);
};

enum class Engine { reference, thinning };

struct SimConfig {
  Engine engine = Engine::reference;
  bool lineage = false;
  // scale index handed to the mutation family; 0 derives round(1/zeta)
  int scale_N = 0;
  long long max_events = 100'000'000;  // non-explosion guard (Yule bound makes hits a config error)
  long long validate_every = 0;        // full state validation cadence, 0 = off
};

class Simulation {
 public:
  Simulation(FinitePhylogeny chi0, RateModel model, SimConfig config, RandomStream rng);

  const FinitePhylogeny& chi() const { return chi_; }
  const RateModel& model() const { return model_; }
  double time() const { return time_; }
  bool extinct() const { return chi_.empty(); }
  long long event_count() const { return events_; }
  long long proposal_count() const { return proposals_; }
  int scale_N() const { return scale_N_; }
  const LineageForest* lineage() const { return config_.lineage ? &forest_ : nullptr; }
  LineageForest* lineage_mut() { return config_.lineage ? &forest_ : nullptr; }

  // Advances to the next event, or to cap when the next event falls beyond it
  // (exact by memorylessness); nullopt means the cap was reached.  An empty
  // state idles to the cap.
  std::optional<EventRecord> step_until(double cap);

 private:
  std::optional<EventRecord> step_reference(double cap);
  std::optional<EventRecord> step_thinning(double cap);
  EventRecord apply_death(std::size_t pos, EventKind kind);
  EventRecord apply_birth(std::size_t pos, bool enhanced);

  FinitePhylogeny chi_;
  RateModel model_;
  SimConfig config_;
  RandomStream rng_;
  LineageForest forest_;
  double time_ = 0.0;
  long long events_ = 0;
  long long proposals_ = 0;
  int scale_N_ = 1;
};

struct Trajectory {
  double end_time = 0.0;
  bool extinct = false;
  long long events = 0;
  std::vector<EventRecord> log;  // filled when record_events
};

// Runs to T; on_observe fires at each grid time with the state then current
// (grid times must be sorted).  Event records are appended when requested.
Trajectory simulate(Simulation& sim, double T, const std::vector<double>& observation_times,
                    const std::function<void(double, const Simulation&)>& on_observe,
                    bool record_events = false);

// chi marginal on traits: (trait, mass) per clan.
struct TraitMass {
  Trait trait;
  double mass = 0.0;
};
std::vector<TraitMass> trait_marginal(const FinitePhylogeny& chi);

// eta measure on trait x genetic age, restricted to descendants of the given
// roots (empty filter means all roots).  Needs lineage tracking.
struct TraitAgeMass {
  Trait trait;
  double age = 0.0;
  double mass = 0.0;
};
std::vector<TraitAgeMass> trait_age_measure(const Simulation& sim, const std::vector<std::size_t>& roots = {});

// Monotone coupling of two models on one proposal stream.  Population 1 runs
// model1 and is kept a sub-population of population 2 running model2; valid
// when model2's kernels depend only on the affected trait and dominate:
// gamma2_birth >= gamma1_birth, gamma2_death <= gamma1_death pointwise, with
// beta, p and the mutation family shared.
struct DominationReport {
  bool preconditions_ok = true;
  std::vector<std::string> precondition_failures;
  bool subset_ok = true;       // counts1 <= counts2 after every event
  long long events = 0;
  long long proposals = 0;
  long long subset_checks = 0;
  double final_mass1 = 0.0;
  double final_mass2 = 0.0;
  bool extinct1 = false;
  bool extinct2 = false;

  nlohmann::json to_json() const;
};

DominationReport coupled_domination_run(const FinitePhylogeny& chi0, const RateModel& model1,
                                        const RateModel& model2, double T, RandomStream& rng);

}  // namespace phylosim
