#pragma once

// HTTP play service: human-vs-agent sessions on board games.
//
//   POST /api/sessions                 create {game, rows, cols, win_length, gravity, human_side, agent}
//   GET  /api/sessions                 list
//   GET  /api/sessions/{id}            state
//   POST /api/sessions/{id}/moves      play {action}; the agent replies unless the game is over
//   GET  /api/checkpoints              list agents (built-ins and checkpoint files)
//
// Errors are {"error": code, "message": text}; an illegal move also carries
// "legal_mask" and leaves the session unchanged.

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "afn/evalsuite.hpp"
#include "afn/games.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace afn::cli {

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

class PlayService {
 public:
  // `cfg` is the "serve" config section.
  explicit PlayService(const nlohmann::json& cfg);

  HttpResponse create_session(const nlohmann::json& body);
  HttpResponse list_sessions();
  HttpResponse get_session(const std::string& id);
  HttpResponse play(const std::string& id, const nlohmann::json& body);
  HttpResponse list_checkpoints();

  // Routes the endpoints (and static files when configured) onto `server`.
  void mount(httplib::Server& server);

 private:
  struct Session {
    std::string id;
    std::shared_ptr<const BoardGame> game;
    std::vector<Action> history;
    int human_side = 1;
    std::string agent_id;
    std::shared_ptr<Agent> agent;
    std::shared_ptr<std::mutex> agent_mu;
    nlohmann::json last_policy;  // null until the agent moves
    int last_agent_move = -1;
    std::uint64_t moves_played = 0;
    std::mutex mu;
  };

  static HttpResponse error(int status, const std::string& code, const std::string& message);
  nlohmann::json state_of(const Session& s) const;
  std::vector<nlohmann::json> scan_checkpoints() const;
  void agent_reply(Session& s);
  std::shared_ptr<Session> find(const std::string& id);

  nlohmann::json cfg_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
  std::map<std::string, std::pair<std::shared_ptr<Agent>, std::shared_ptr<std::mutex>>> agents_;
};

// Blocks serving on host:port until the process is stopped.
void run_server(const nlohmann::json& cfg);

}  // namespace afn::cli
