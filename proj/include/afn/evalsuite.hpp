#pragma once

// Agents, head-to-head matches, round-robin tournaments, Elo fitting and
// flow-error metrics against exact tables.

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "afn/env.hpp"
#include "afn/exact_flows.hpp"
#include "afn/model.hpp"
#include "afn/rng.hpp"
#include "afn/solver.hpp"

namespace afn {

class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::string id() const = 0;
  // Move for the player owning s (a nonterminal player state of env).
  virtual Action act(const TreeEnv& env, const StateKey& s, Rng& rng) = 0;
  // Probabilities over the legal actions of s, when the agent has them.
  virtual std::vector<double> policy(const TreeEnv& env, const StateKey& s);
};

class UniformAgent final : public Agent {
 public:
  std::string id() const override { return "uniform"; }
  Action act(const TreeEnv& env, const StateKey& s, Rng& rng) override;
  std::vector<double> policy(const TreeEnv& env, const StateKey& s) override;
};

// Where a model's move distribution comes from: its policy head, or the
// ratios of its children's log-flows (terminal children pinned to rewards).
enum class PolicySource { kLogits, kFlows };
std::string to_string(PolicySource p);
PolicySource policy_source_from_string(std::string_view s);

// Log-flows of the children of s from model head `side`, with terminal children pinned
// to `player`'s (default: side) env-supplied or branch-adjusted outcome log-reward.
std::vector<double> child_log_flows(const TreeEnv& env, PolicyModel& model, const StateKey& s,
                                    int side, double lambda, int player = 0);

class ModelAgent final : public Agent {
 public:
  ModelAgent(std::string id, std::shared_ptr<PolicyModel> model, double temperature = 0.0,
             PolicySource source = PolicySource::kLogits, double lambda = 1.0);
  std::string id() const override { return id_; }
  Action act(const TreeEnv& env, const StateKey& s, Rng& rng) override;
  std::vector<double> policy(const TreeEnv& env, const StateKey& s) override;

 private:
  std::vector<double> logits_over_legal(const TreeEnv& env, const StateKey& s,
                                        std::vector<Action>& legal);

  std::string id_;
  std::shared_ptr<PolicyModel> model_;
  double temperature_;
  PolicySource source_;
  double lambda_;
};

// Solver-backed perfect play on board games: best score, lowest action on ties.
class PerfectAgent final : public Agent {
 public:
  explicit PerfectAgent(SolverOptions opts = {});
  std::string id() const override { return "perfect"; }
  Action act(const TreeEnv& env, const StateKey& s, Rng& rng) override;

 private:
  Solver solver_;
};

class SearchAgent final : public Agent {
 public:
  explicit SearchAgent(int depth) : depth_(depth) {}
  std::string id() const override { return "search" + std::to_string(depth_); }
  Action act(const TreeEnv& env, const StateKey& s, Rng& rng) override;

 private:
  int depth_;
};

// ---------------------------------------------------------------------------
// Matches.

struct MatchRecord {
  std::string agent_a, agent_b;
  bool a_first = true;
  Outcome outcome = Outcome::kDraw;  // from the first mover's perspective
  int plies = 0;
  std::uint64_t seed = 0;

  // Points for agent_a under the 2/1/0 convention.
  int points_a() const;
};

// Plays one game; `first` moves as player 1.
MatchRecord play_match(const TreeEnv& env, Agent& first, Agent& second, std::uint64_t seed);

// Round-robin over every unordered pair; each pair plays games_per_pair games
// (must be even), half with each agent moving first. Match seeds derive from
// `seed`, the pair and the game index.
std::vector<MatchRecord> run_tournament(const TreeEnv& env,
                                        std::span<const std::shared_ptr<Agent>> agents,
                                        int games_per_pair, std::uint64_t seed);

struct WinDrawLoss {
  int games = 0, wins = 0, draws = 0, losses = 0;
  double win_rate() const { return games ? double(wins) / games : 0.0; }
  double draw_rate() const { return games ? double(draws) / games : 0.0; }
  double loss_rate() const { return games ? double(losses) / games : 0.0; }
};

// Tallies `agent`'s results across records.
WinDrawLoss tally(std::span<const MatchRecord> records, const std::string& agent);

// `games` games of `agent` against a uniform opponent, alternating colors
// starting with agent first.
WinDrawLoss evaluate_vs_uniform(const TreeEnv& env, Agent& agent, int games, std::uint64_t seed);

void write_matches_csv(std::ostream& os, std::span<const MatchRecord> records);
std::vector<MatchRecord> read_matches_csv(std::istream& is);

// ---------------------------------------------------------------------------
// Elo.

struct EloTable {
  std::vector<std::string> agents;
  std::vector<double> rating;
  std::vector<double> std_error;
  double draw_param = 0;  // Davidson nu
  int iterations = 0;

  double of(const std::string& agent) const;
};

struct EloOptions {
  std::string anchor = "uniform";
  double tolerance = 1e-8;
  int max_iterations = 200;
};

// Maximum-likelihood ratings under the Davidson win/draw/loss model with the
// draw parameter fitted jointly, rating scale 400/ln 10 and the anchor agent
// fixed at 0 (the first agent in sorted order when the anchor is absent).
// Throws InvalidArgument on a disconnected comparison graph and NumericError
// when the likelihood has no finite maximizer.
EloTable fit_elo(std::span<const MatchRecord> records, const EloOptions& opts = {});

void write_elo_csv(std::ostream& os, const EloTable& t);

// ---------------------------------------------------------------------------
// Flow error.

struct FlowMae {
  double node = 0;
  double edge = 0;
  std::size_t nodes = 0;
  std::size_t edges = 0;
};

// Mean |exp(learned) - F| over `states`, and over the edges of states owned
// by `player` in the sample, of |F^(s) P^(c|s) - F(c)| where P^ normalizes
// the learned child flows. Throws InvalidArgument on a node outside the tree.
FlowMae flow_mae(const FlowTable& exact, int player, std::span<const NodeId> states,
                 const std::function<double(NodeId)>& learned_log_flow);
// Same with the learned flows read from model side `side`; terminal flows are
// taken from the exact table when `pin_terminals`.
FlowMae flow_mae(const FlowTable& exact, int player, std::span<const NodeId> states,
                 PolicyModel& model, int side, bool pin_terminals);

// Nonterminal nodes visited by `count` uniform random rollouts (all
// nonterminal states along each rollout), deduplicated, ascending.
std::vector<NodeId> uniform_rollout_states(const GameTree& tree, int count, Rng& rng);


// ---------------------------------------------------------------------------
// Move quality.

struct QualityReport {
  std::size_t positions = 0;
  std::size_t skipped = 0;  // unsolved within budget
  double optimal = 0, inaccuracy = 0, blunder = 0;

  std::size_t evaluated() const { return positions - skipped; }
  double optimal_rate() const { return evaluated() ? optimal / evaluated() : 0.0; }
  double inaccuracy_rate() const { return evaluated() ? inaccuracy / evaluated() : 0.0; }
  double blunder_rate() const { return evaluated() ? blunder / evaluated() : 0.0; }
};

// Classifies the agent's move at every corpus position. A UniformAgent is
// scored by its expected classification (each legal move weighted equally);
// other agents by the move they play.
QualityReport move_quality(const BoardGame& game, std::span<const std::vector<Action>> corpus,
                           Agent& agent, Solver& solver, std::uint64_t seed = 0);

}  // namespace afn
