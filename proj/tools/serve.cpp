#include "serve.hpp"

#include <filesystem>
#include <fstream>

#include "config.hpp"
#include "httplib.h"

namespace afn::cli {

using nlohmann::json;

PlayService::PlayService(const json& cfg) : cfg_(cfg) {}

HttpResponse PlayService::error(int status, const std::string& code, const std::string& message) {
  return {status, {{"error", code}, {"message", message}}};
}

namespace {

std::string status_of(const Board& b) {
  if (!b.terminal()) return "active";
  switch (b.outcome()) {
    case Outcome::kP1Win: return "p1_win";
    case Outcome::kP2Win: return "p2_win";
    default: return "draw";
  }
}

const std::vector<std::string> kBuiltins = {"uniform", "perfect", "search:2", "search:4"};

}  // namespace

std::vector<json> PlayService::scan_checkpoints() const {
  std::vector<json> out;
  const std::string dir = cfg_.value("checkpoints", "");
  if (dir.empty() || !std::filesystem::is_directory(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    try {
      std::ifstream is(p);
      const json j = json::parse(is);
      if (j.value("format", "") != "afn-checkpoint") continue;
      out.push_back({{"id", p.stem().string()},
                     {"path", p.string()},
                     {"game", j.at("model").at("env")},
                     {"kind", j.at("model").at("kind")},
                     {"step", j.value("step", 0)}});
    } catch (const std::exception&) {
      continue;
    }
  }
  return out;
}

HttpResponse PlayService::list_checkpoints() {
  json list = json::array();
  for (const auto& b : kBuiltins) list.push_back({{"id", b}, {"builtin", true}});
  for (auto& c : scan_checkpoints()) {
    c["builtin"] = false;
    list.push_back(std::move(c));
  }
  return {200, {{"checkpoints", list}}};
}

json PlayService::state_of(const Session& s) const {
  Board b(s.game->spec());
  b.play_all(s.history);
  const auto& sp = s.game->spec();
  json board = json::array();
  // Displayed top row first; gravity boards fill from their bottom row.
  for (int dr = 0; dr < sp.rows; ++dr) {
    const int r = sp.gravity ? sp.rows - 1 - dr : dr;
    json row = json::array();
    for (int c = 0; c < sp.cols; ++c) row.push_back(b.cell(r, c));
    board.push_back(row);
  }
  json mask = json::array();
  json legal = json::array();
  for (Action a = 0; a < sp.action_space_size(); ++a) {
    const bool ok = !b.terminal() && b.can_play(a);
    mask.push_back(ok);
    if (ok) legal.push_back(a);
  }
  return {{"id", s.id},
          {"game", s.game->name()},
          {"rows", sp.rows},
          {"cols", sp.cols},
          {"win_length", sp.win_length},
          {"gravity", sp.gravity},
          {"board", board},
          {"history", s.history},
          {"to_move", b.terminal() ? 0 : b.to_move()},
          {"legal_mask", mask},
          {"legal_actions", legal},
          {"status", status_of(b)},
          {"human_side", s.human_side},
          {"agent", s.agent_id},
          {"last_agent_move", s.last_agent_move},
          {"last_agent_policy", s.last_policy}};
}

std::shared_ptr<PlayService::Session> PlayService::find(const std::string& id) {
  std::lock_guard<std::mutex> lk(mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

void PlayService::agent_reply(Session& s) {
  Board b(s.game->spec());
  b.play_all(s.history);
  if (b.terminal() || b.to_move() == s.human_side) return;
  const StateKey key = StateKey::from_actions(s.history);
  Rng rng(std::hash<std::string>{}(s.id) ^ (s.moves_played * 0x9e3779b97f4a7c15ull));
  Action a;
  std::vector<double> probs;
  {
    std::lock_guard<std::mutex> lk(*s.agent_mu);
    a = s.agent->act(*s.game, key, rng);
    probs = s.agent->policy(*s.game, key);
  }
  const auto legal = b.legal_actions();
  if (probs.size() != legal.size()) {
    probs.assign(legal.size(), 0.0);
    for (std::size_t i = 0; i < legal.size(); ++i) {
      if (legal[i] == a) probs[i] = 1.0;
    }
  }
  s.last_policy = {{"actions", legal}, {"probs", probs}};
  s.last_agent_move = a;
  s.history.push_back(a);
  ++s.moves_played;
}

HttpResponse PlayService::create_session(const json& body) {
  if (!body.is_object()) return error(400, "bad_request", "body must be a JSON object");
  json env = default_config("serve")["env"];
  int human_side = 1;
  std::string agent_id = "uniform";
  for (const auto& [k, v] : body.items()) {
    if (k == "human_side") {
      if (!v.is_number_integer() || (v.get<int>() != 1 && v.get<int>() != 2)) {
        return error(400, "bad_request", "human_side must be 1 or 2");
      }
      human_side = v.get<int>();
    } else if (k == "agent") {
      if (!v.is_string()) return error(400, "bad_request", "agent must be a string");
      agent_id = v.get<std::string>();
    } else if (k == "game" || k == "rows" || k == "cols" || k == "win_length" || k == "gravity") {
      try {
        merge_strict(env, json{{k, v}}, "env");
      } catch (const Error& e) {
        return error(400, "bad_request", e.what());
      }
    } else {
      return error(400, "bad_request", "unknown field '" + k + "'");
    }
  }
  auto s = std::make_shared<Session>();
  try {
    s->game = make_board_game(board_spec(env));
  } catch (const Error& e) {
    return error(400, "bad_request", e.what());
  }
  s->human_side = human_side;
  s->agent_id = agent_id;

  const std::string cache_key = agent_id + "|" + s->game->name();
  {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = agents_.find(cache_key);
    if (it == agents_.end()) {
      std::string spec = agent_id;
      if (std::find(kBuiltins.begin(), kBuiltins.end(), agent_id) == kBuiltins.end()) {
        std::string path;
        for (const auto& c : scan_checkpoints()) {
          if (c.at("id") == agent_id) path = c.at("path");
        }
        if (path.empty()) return error(404, "not_found", "no agent or checkpoint '" + agent_id + "'");
        spec = "model:" + path;
      }
      try {
        auto agent = make_agent(spec, s->game, cfg_.value("node_budget", std::uint64_t{200'000'000}));
        it = agents_.emplace(cache_key, std::make_pair(agent, std::make_shared<std::mutex>())).first;
      } catch (const Error& e) {
        return error(400, "bad_request", e.what());
      }
    }
    s->agent = it->second.first;
    s->agent_mu = it->second.second;
    s->id = std::to_string(next_id_++);
    sessions_[s->id] = s;
  }
  std::lock_guard<std::mutex> lk(s->mu);
  try {
    agent_reply(*s);
  } catch (const Error& e) {
    return error(500, "agent_failed", e.what());
  }
  return {201, state_of(*s)};
}

HttpResponse PlayService::list_sessions() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard<std::mutex> lk(mu_);
    for (const auto& [id, s] : sessions_) all.push_back(s);
  }
  json list = json::array();
  for (const auto& s : all) {
    std::lock_guard<std::mutex> lk(s->mu);
    const json st = state_of(*s);
    list.push_back({{"id", s->id}, {"game", st["game"]}, {"status", st["status"]}, {"agent", s->agent_id}});
  }
  return {200, {{"sessions", list}}};
}

HttpResponse PlayService::get_session(const std::string& id) {
  auto s = find(id);
  if (!s) return error(404, "not_found", "no session '" + id + "'");
  std::lock_guard<std::mutex> lk(s->mu);
  return {200, state_of(*s)};
}

HttpResponse PlayService::play(const std::string& id, const json& body) {
  auto s = find(id);
  if (!s) return error(404, "not_found", "no session '" + id + "'");
  if (!body.is_object() || !body.contains("action") || !body.at("action").is_number_integer() ||
      body.size() != 1) {
    return error(400, "bad_request", "body must be {\"action\": <integer>}");
  }
  const int a = body.at("action").get<int>();
  std::lock_guard<std::mutex> lk(s->mu);
  Board b(s->game->spec());
  b.play_all(s->history);
  if (b.terminal()) return error(409, "game_over", "the game is over");
  if (b.to_move() != s->human_side) return error(409, "not_your_turn", "the agent is to move");
  if (a < 0 || a >= s->game->spec().action_space_size() || !b.can_play(a)) {
    HttpResponse r = error(422, "illegal_move", "action " + std::to_string(a) + " is not legal");
    r.body["legal_mask"] = state_of(*s)["legal_mask"];
    return r;
  }
  s->history.push_back(a);
  ++s->moves_played;
  try {
    agent_reply(*s);
  } catch (const Error& e) {
    return error(500, "agent_failed", e.what());
  }
  return {200, state_of(*s)};
}

void PlayService::mount(httplib::Server& server) {
  auto send = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto parse = [](const httplib::Request& req, json& out) {
    try {
      out = req.body.empty() ? json::object() : json::parse(req.body);
      return true;
    } catch (const json::exception&) {
      return false;
    }
  };
  server.Post("/api/sessions", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
    json body;
    if (!parse(req, body)) return send(res, error(400, "bad_request", "body is not JSON"));
    send(res, create_session(body));
  });
  server.Get("/api/sessions", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, list_sessions());
  });
  server.Get(R"(/api/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, get_session(req.matches[1]));
  });
  server.Post(R"(/api/sessions/([^/]+)/moves)",
              [this, send, parse](const httplib::Request& req, httplib::Response& res) {
                json body;
                if (!parse(req, body)) return send(res, error(400, "bad_request", "body is not JSON"));
                send(res, play(req.matches[1], body));
              });
  server.Get("/api/checkpoints", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, list_checkpoints());
  });
  const std::string dir = cfg_.value("static_dir", "");
  if (!dir.empty() && !server.set_mount_point("/", dir)) {
    throw InvalidArgument("static_dir " + dir + " is not a directory");
  }
}

void run_server(const json& cfg) {
  PlayService service(cfg);
  httplib::Server server;
  service.mount(server);
  const std::string host = cfg.at("host");
  const int port = cfg.at("port");
  if (!server.listen(host, port)) {
    throw InvalidArgument("cannot listen on " + host + ":" + std::to_string(port));
  }
}

}  // namespace afn::cli
