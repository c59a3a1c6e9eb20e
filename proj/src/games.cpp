#include "afn/games.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "afn/rng.hpp"

namespace afn {

void BoardGameSpec::validate() const {
  if (rows < 1 || cols < 1) throw InvalidArgument("board needs at least one row and column");
  if (win_length < 1 || win_length > std::max(rows, cols)) {
    throw InvalidArgument("win_length must be in 1..max(rows, cols)");
  }
  if (rows * cols > 64) throw InvalidArgument("board exceeds 64 cells");
  // One padding bit per column.
  if ((rows + 1) * cols > 64) {
    throw InvalidArgument("board does not fit the padded 64-bit layout ((rows+1)*cols > 64)");
  }
}

std::string BoardGameSpec::name() const {
  std::ostringstream os;
  os << (gravity ? "connect" : "mnk") << win_length << "_" << rows << "x" << cols;
  return os.str();
}

Board::Board(const BoardGameSpec& spec) : spec_(spec) {
  spec_.validate();
  const int h = spec_.rows + 1;
  shifts_ = {1, h, h + 1, h - 1};
}

std::pair<int, int> Board::target_cell(Action a) const {
  if (spec_.gravity) {
    const std::uint64_t col_bits =
        ((std::uint64_t{1} << spec_.rows) - 1) << (a * (spec_.rows + 1));
    return {std::popcount(occupied_ & col_bits), a};
  }
  return {a / spec_.cols, a % spec_.cols};
}

bool Board::can_play(Action a) const {
  if (terminal()) return false;
  if (a < 0 || a >= spec_.action_space_size()) return false;
  auto [r, c] = target_cell(a);
  if (r >= spec_.rows) return false;
  return !(occupied_ >> bit_index(r, c) & 1);
}

bool Board::has_line(std::uint64_t bits) const {
  const int k = spec_.win_length;
  if (k == 1) return bits != 0;
  for (int d : shifts_) {
    std::uint64_t x = bits;
    for (int i = 1; i < k && x; ++i) {
      const int s = i * d;
      x = s >= 64 ? 0 : x & (bits >> s);
    }
    if (x) return true;
  }
  return false;
}

void Board::play(Action a) {
  if (!can_play(a)) {
    throw InvalidArgument("illegal move " + std::to_string(a) + " at ply " +
                          std::to_string(ply_));
  }
  auto [r, c] = target_cell(a);
  const std::uint64_t bit = std::uint64_t{1} << bit_index(r, c);
  const int side = ply_ & 1;
  pieces_[side] |= bit;
  occupied_ |= bit;
  ++ply_;
  if (has_line(pieces_[side])) winner_ = side + 1;
}

void Board::play_all(std::span<const Action> moves) {
  for (Action a : moves) play(a);
}

std::vector<Action> Board::legal_actions() const {
  std::vector<Action> out;
  for (Action a = 0; a < spec_.action_space_size(); ++a) {
    if (can_play(a)) out.push_back(a);
  }
  return out;
}

int Board::num_legal() const {
  int n = 0;
  for (Action a = 0; a < spec_.action_space_size(); ++a) n += can_play(a);
  return n;
}

Outcome Board::outcome() const {
  if (winner_ == 1) return Outcome::kP1Win;
  if (winner_ == 2) return Outcome::kP2Win;
  if (ply_ == spec_.cells()) return Outcome::kDraw;
  return Outcome::kNone;
}

int Board::cell(int row, int col) const {
  const int b = bit_index(row, col);
  if (pieces_[0] >> b & 1) return 1;
  if (pieces_[1] >> b & 1) return 2;
  return 0;
}

bool Board::wins_immediately(Action a) const {
  if (!can_play(a)) return false;
  Board next = *this;
  next.play(a);
  return next.winner_ == to_move();
}

std::string Board::position_key() const {
  std::string k(16, '\0');
  std::memcpy(k.data(), &pieces_[0], 8);
  std::memcpy(k.data() + 8, &pieces_[1], 8);
  return k;
}

Action Board::mirror_action(Action a) const {
  if (spec_.gravity) return spec_.cols - 1 - a;
  const int r = a / spec_.cols;
  const int c = a % spec_.cols;
  return r * spec_.cols + (spec_.cols - 1 - c);
}

std::string Board::to_string() const {
  std::string out;
  for (int i = 0; i < spec_.rows; ++i) {
    const int r = spec_.gravity ? spec_.rows - 1 - i : i;
    for (int c = 0; c < spec_.cols; ++c) {
      const int v = cell(r, c);
      out += v == 1 ? 'X' : v == 2 ? 'O' : '.';
    }
    out += '\n';
  }
  return out;
}

BoardGame::BoardGame(const BoardGameSpec& spec) : spec_(spec) { spec_.validate(); }

Board BoardGame::board_at(const StateKey& s) const {
  Board b(spec_);
  for (auto a : s.history()) b.play(a);
  return b;
}

void BoardGame::describe(const StateKey& s, NodeInfo& out) const {
  Board b = board_at(s);
  out.actions.clear();
  out.env_probs.clear();
  out.log_rewards.clear();
  if (b.terminal()) {
    out.kind = NodeKind::kTerminal;
    out.player = 0;
    out.outcome = b.outcome();
    return;
  }
  out.kind = NodeKind::kPlayer;
  out.player = b.to_move();
  out.outcome = Outcome::kNone;
  for (Action a = 0; a < spec_.action_space_size(); ++a) {
    if (b.can_play(a)) out.actions.push_back(a);
  }
}

std::string BoardGame::table_key(const StateKey& s) const {
  return board_at(s).position_key();
}

void BoardGame::encode_features(const Board& b, std::vector<double>& out) {
  const auto& sp = b.spec();
  const int n = sp.cells();
  out.assign(3 * n, 0.0);
  const int me = b.to_move();
  const double turn = me == 1 ? 1.0 : 0.0;
  for (int r = 0; r < sp.rows; ++r) {
    for (int c = 0; c < sp.cols; ++c) {
      const int i = r * sp.cols + c;
      const int v = b.cell(r, c);
      if (v == me) out[i] = 1.0;
      else if (v != 0) out[n + i] = 1.0;
      out[2 * n + i] = turn;
    }
  }
}

void BoardGame::features(const StateKey& s, std::vector<double>& out) const {
  encode_features(board_at(s), out);
}

std::shared_ptr<const BoardGame> make_board_game(const BoardGameSpec& spec) {
  return std::make_shared<const BoardGame>(spec);
}

std::string encode_moves(std::span<const Action> moves, int action_space_size) {
  std::string out;
  if (action_space_size <= 36) {
    for (Action a : moves) {
      out += static_cast<char>(a < 10 ? '0' + a : 'a' + (a - 10));
    }
    return out;
  }
  for (std::size_t i = 0; i < moves.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(moves[i]);
  }
  return out;
}

std::vector<Action> parse_moves(std::string_view text) {
  std::vector<Action> out;
  if (text.find(',') != std::string_view::npos) {
    const StateKey k = StateKey::parse(text);
    return std::vector<Action>(k.history().begin(), k.history().end());
  }
  for (char ch : text) {
    if (ch >= '0' && ch <= '9') {
      out.push_back(ch - '0');
    } else if (ch >= 'a' && ch <= 'z') {
      out.push_back(10 + (ch - 'a'));
    } else if (ch >= 'A' && ch <= 'Z') {
      out.push_back(10 + (ch - 'A'));
    } else if (ch == ' ' || ch == '\t' || ch == '\r') {
      continue;
    } else {
      throw InvalidArgument(std::string("bad move character '") + ch + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ToyStochasticTree::ToyStochasticTree(std::string name, int num_players,
                                     std::vector<ToyNode> nodes)
    : name_(std::move(name)), num_players_(num_players), nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw InvalidArgument("toy tree needs a root");
  std::vector<int> parents(nodes_.size(), -1);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.kind == NodeKind::kTerminal) {
      if (!n.children.empty()) throw InvalidArgument("terminal toy node with children");
      continue;
    }
    if (n.children.empty()) throw InvalidArgument("nonterminal toy node without children");
    if (n.kind == NodeKind::kEnvironment && n.env_probs.size() != n.children.size()) {
      throw InvalidArgument("env toy node probability count mismatch");
    }
    action_space_ = std::max<int>(action_space_, static_cast<int>(n.children.size()));
    for (int c : n.children) {
      if (c <= 0 || c >= static_cast<int>(nodes_.size()) || parents[c] != -1) {
        throw InvalidArgument("toy node list is not a tree rooted at node 0");
      }
      parents[c] = static_cast<int>(i);
    }
  }
}

int ToyStochasticTree::node_of(const StateKey& s) const {
  int n = 0;
  for (auto a : s.history()) {
    const auto& ch = nodes_[n].children;
    if (a >= static_cast<int>(ch.size())) {
      throw InvalidArgument("state [" + s.to_string() + "] not in toy tree");
    }
    n = ch[a];
  }
  return n;
}

void ToyStochasticTree::describe(const StateKey& s, NodeInfo& out) const {
  const ToyNode& n = nodes_[node_of(s)];
  out.kind = n.kind;
  out.player = n.kind == NodeKind::kPlayer ? n.player : 0;
  out.actions.clear();
  for (std::size_t i = 0; i < n.children.size(); ++i) out.actions.push_back(static_cast<Action>(i));
  out.env_probs = n.env_probs;
  out.log_rewards = n.log_rewards;
  out.outcome = n.outcome;
}

namespace {

ToyNode terminal_node(std::vector<double> log_rewards, Outcome outcome = Outcome::kNone) {
  ToyNode t;
  t.kind = NodeKind::kTerminal;
  t.log_rewards = std::move(log_rewards);
  t.outcome = outcome;
  return t;
}

ToyNode player_node(int player, std::vector<int> children) {
  ToyNode n;
  n.kind = NodeKind::kPlayer;
  n.player = player;
  n.children = std::move(children);
  return n;
}

ToyNode env_node(std::vector<int> children, std::vector<double> probs) {
  ToyNode n;
  n.kind = NodeKind::kEnvironment;
  n.player = 0;
  n.children = std::move(children);
  n.env_probs = std::move(probs);
  return n;
}

}  // namespace

std::shared_ptr<const ToyStochasticTree> make_two_chance_tree(bool deterministic) {
  std::vector<ToyNode> nodes;
  nodes.push_back(player_node(1, {1, 2}));
  if (deterministic) {
    nodes.push_back(env_node({3}, {1.0}));
    nodes.push_back(env_node({4}, {1.0}));
    nodes.push_back(terminal_node({std::log(1.0)}));
    nodes.push_back(terminal_node({std::log(4.0)}));
  } else {
    nodes.push_back(env_node({3, 4}, {0.5, 0.5}));
    nodes.push_back(env_node({5, 6}, {0.5, 0.5}));
    for (double r : {1.0, 2.0, 4.0, 8.0}) nodes.push_back(terminal_node({std::log(r)}));
  }
  return std::make_shared<const ToyStochasticTree>(
      deterministic ? "two_chance_deterministic" : "two_chance", 1, std::move(nodes));
}

std::shared_ptr<const ToyStochasticTree> make_random_toy_tree(std::uint64_t seed, int levels,
                                                              int max_branch,
                                                              double env_fraction) {
  Rng rng(seed);
  std::vector<ToyNode> nodes;
  std::vector<int> level_of;
  nodes.emplace_back();
  level_of.push_back(0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const int lvl = level_of[i];
    if (lvl == levels) {
      const double lr = std::log(0.1) + rng.uniform() * (std::log(10.0) - std::log(0.1));
      nodes[i] = terminal_node({lr});
      continue;
    }
    const bool env = i != 0 && rng.uniform() < env_fraction;
    const int k = 1 + rng.uniform_int(max_branch);
    std::vector<int> kids;
    for (int j = 0; j < k; ++j) {
      kids.push_back(static_cast<int>(nodes.size()));
      nodes.emplace_back();
      level_of.push_back(lvl + 1);
    }
    if (env) {
      std::vector<double> p(k);
      double tot = 0;
      for (auto& x : p) tot += (x = 0.1 + rng.uniform());
      for (auto& x : p) x /= tot;
      nodes[i] = env_node(std::move(kids), std::move(p));
    } else {
      nodes[i] = player_node(1, std::move(kids));
    }
  }
  return std::make_shared<const ToyStochasticTree>("random_toy_" + std::to_string(seed), 1,
                                                   std::move(nodes));
}

std::shared_ptr<const ToyStochasticTree> make_single_move_game(std::vector<Outcome> outcomes) {
  if (outcomes.empty()) throw InvalidArgument("single-move game needs at least one move");
  std::vector<ToyNode> nodes;
  std::vector<int> kids;
  for (std::size_t i = 0; i < outcomes.size(); ++i) kids.push_back(static_cast<int>(i + 1));
  nodes.push_back(player_node(1, kids));
  for (Outcome o : outcomes) nodes.push_back(terminal_node({}, o));
  return std::make_shared<const ToyStochasticTree>("single_move", 2, std::move(nodes));
}

std::shared_ptr<const ToyStochasticTree> make_two_by_two_game(
    const std::array<std::array<Outcome, 2>, 2>& outcomes) {
  std::vector<ToyNode> nodes;
  nodes.push_back(player_node(1, {1, 2}));
  nodes.push_back(player_node(2, {3, 4}));
  nodes.push_back(player_node(2, {5, 6}));
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) nodes.push_back(terminal_node({}, outcomes[i][j]));
  }
  return std::make_shared<const ToyStochasticTree>("two_by_two", 2, std::move(nodes));
}

std::shared_ptr<const ToyStochasticTree> make_random_game(std::uint64_t seed, int max_depth,
                                                          int max_branch) {
  Rng rng(seed);
  std::vector<ToyNode> nodes;
  std::vector<int> depth_of;
  nodes.emplace_back();
  depth_of.push_back(0);
  const Outcome kOutcomes[3] = {Outcome::kP1Win, Outcome::kP2Win, Outcome::kDraw};
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const int d = depth_of[i];
    const bool stop = d == max_depth || (d > 0 && rng.uniform() < 0.25);
    if (stop) {
      nodes[i] = terminal_node({}, kOutcomes[rng.uniform_int(3)]);
      continue;
    }
    const int k = 1 + rng.uniform_int(max_branch);
    std::vector<int> kids;
    for (int j = 0; j < k; ++j) {
      kids.push_back(static_cast<int>(nodes.size()));
      nodes.emplace_back();
      depth_of.push_back(d + 1);
    }
    nodes[i] = player_node(1 + d % 2, std::move(kids));
  }
  return std::make_shared<const ToyStochasticTree>("random_game_" + std::to_string(seed), 2,
                                                   std::move(nodes));
}

// ---------------------------------------------------------------------------

SequenceEnvSpec SequenceEnvSpec::with_random_pwm(int length, int alphabet, double corruption,
                                                 double beta, std::uint64_t seed) {
  SequenceEnvSpec s;
  s.length = length;
  s.alphabet = alphabet;
  s.corruption = corruption;
  s.beta = beta;
  Rng rng(seed);
  s.weights.resize(static_cast<std::size_t>(length) * alphabet);
  for (auto& w : s.weights) w = 0.05 + rng.uniform();
  return s;
}

void SequenceEnvSpec::validate() const {
  if (length < 1) throw InvalidArgument("sequence length must be >= 1");
  if (alphabet < 1 || alphabet > 255) throw InvalidArgument("alphabet size must be in 1..255");
  if (!(corruption >= 0.0 && corruption <= 1.0)) {
    throw InvalidArgument("corruption must lie in [0, 1]");
  }
  if (!(beta > 0)) throw InvalidArgument("reward exponent must be positive");
  if (weights.size() != static_cast<std::size_t>(length) * alphabet) {
    throw InvalidArgument("weights must have length*alphabet entries");
  }
  for (double w : weights) {
    if (!(w > 0) || !std::isfinite(w)) throw InvalidArgument("weights must be positive");
  }
}

SequenceEnv::SequenceEnv(SequenceEnvSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  max_sum_ = 0;
  for (int p = 0; p < spec_.length; ++p) {
    double m = 0;
    for (int a = 0; a < spec_.alphabet; ++a) m = std::max(m, spec_.weights[p * spec_.alphabet + a]);
    max_sum_ += m;
  }
}

std::string SequenceEnv::name() const {
  std::ostringstream os;
  os << "sequence_L" << spec_.length << "_A" << spec_.alphabet << "_alpha" << spec_.corruption
     << "_beta" << spec_.beta;
  return os.str();
}

double SequenceEnv::base_score(std::span<const int> sequence) const {
  double s = 0;
  for (std::size_t p = 0; p < sequence.size(); ++p) {
    s += spec_.weights[p * spec_.alphabet + sequence[p]];
  }
  return s / max_sum_;
}

double SequenceEnv::log_reward(std::span<const int> sequence) const {
  return spec_.beta * std::log(base_score(sequence));
}

double SequenceEnv::transition_prob(int chosen, int symbol) const {
  const double a = spec_.corruption;
  if (a == 0.0) return symbol == chosen ? 1.0 : 0.0;
  return (symbol == chosen ? 1.0 - a : 0.0) + a / spec_.alphabet;
}

void SequenceEnv::describe(const StateKey& s, NodeInfo& out) const {
  const auto h = s.history();
  const std::size_t d = h.size();
  out.actions.clear();
  out.env_probs.clear();
  out.log_rewards.clear();
  out.outcome = Outcome::kNone;
  if (d > static_cast<std::size_t>(2 * spec_.length)) {
    throw InvalidArgument("state deeper than the sequence environment");
  }
  if (d == static_cast<std::size_t>(2 * spec_.length)) {
    std::vector<int> seq;
    for (std::size_t i = 1; i < d; i += 2) seq.push_back(h[i]);
    out.kind = NodeKind::kTerminal;
    out.player = 0;
    out.log_rewards.push_back(log_reward(seq));
    return;
  }
  if (d % 2 == 0) {
    out.kind = NodeKind::kPlayer;
    out.player = 1;
    for (int a = 0; a < spec_.alphabet; ++a) out.actions.push_back(a);
    return;
  }
  out.kind = NodeKind::kEnvironment;
  out.player = 0;
  const int chosen = h[d - 1];
  if (spec_.corruption == 0.0) {
    out.actions.push_back(chosen);
    out.env_probs.push_back(1.0);
    return;
  }
  for (int a = 0; a < spec_.alphabet; ++a) {
    out.actions.push_back(a);
    out.env_probs.push_back(transition_prob(chosen, a));
  }
}

void SequenceEnv::features(const StateKey& s, std::vector<double>& out) const {
  const int width = spec_.alphabet + 1;
  out.assign(feature_size(), 0.0);
  const auto h = s.history();
  for (int p = 0; p < spec_.length; ++p) {
    const std::size_t idx = 2 * p + 1;
    const int sym = idx < h.size() ? h[idx] : spec_.alphabet;
    out[p * width + sym] = 1.0;
  }
  out.back() = h.size() % 2 == 1 ? 1.0 : 0.0;
}

std::shared_ptr<const SequenceEnv> make_sequence_env(SequenceEnvSpec spec) {
  return std::make_shared<const SequenceEnv>(std::move(spec));
}


// ---------------------------------------------------------------------------

FixedOpponentEnv::FixedOpponentEnv(std::shared_ptr<const TreeEnv> game, int learner,
                                   double lambda, bool branch_adjusted)
    : game_(std::move(game)), learner_(learner), lambda_(lambda), branch_adjusted_(branch_adjusted) {
  if (!game_ || game_->num_players() != 2) {
    throw InvalidArgument("fixed-opponent view needs a two-player game");
  }
  if (learner_ != 1 && learner_ != 2) throw InvalidArgument("learner must be 1 or 2");
  if (!(lambda_ >= 0) || !std::isfinite(lambda_)) throw InvalidArgument("lambda must be >= 0");
}

std::string FixedOpponentEnv::name() const {
  return game_->name() + "/vs-uniform-p" + std::to_string(learner_);
}

void FixedOpponentEnv::describe(const StateKey& s, NodeInfo& out) const {
  game_->describe(s, out);
  if (out.kind == NodeKind::kPlayer) {
    if (out.player == learner_) {
      out.player = 1;
    } else {
      out.kind = NodeKind::kEnvironment;
      out.player = 0;
      out.env_probs.assign(out.actions.size(), 1.0 / static_cast<double>(out.actions.size()));
    }
    return;
  }
  if (out.kind != NodeKind::kTerminal) return;
  double v = 0;
  switch (out.outcome) {
    case Outcome::kDraw: v = 0; break;
    case Outcome::kP1Win: v = learner_ == 1 ? lambda_ : -lambda_; break;
    case Outcome::kP2Win: v = learner_ == 2 ? lambda_ : -lambda_; break;
    case Outcome::kNone: throw InvalidArgument("terminal without a game outcome");
  }
  if (branch_adjusted_) {
    NodeInfo ni;
    StateKey prefix;
    for (auto a : s.history()) {
      game_->describe(prefix, ni);
      if (ni.kind == NodeKind::kPlayer && ni.player == learner_) {
        v -= std::log(static_cast<double>(ni.actions.size()));
      }
      prefix.push(a);
    }
  }
  out.log_rewards.assign(1, v);
}

}  // namespace afn
