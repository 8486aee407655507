// SPDX-License-Identifier: Apache-2.0
#pragma once

// Newline-delimited JSON request/response protocol between the scheduler
// and an external trainer. One request in flight at a time.
//
//   request   {"args":{...},"cmd":"<name>","id":<int>}
//   response  {"id":<int>,"ok":true,"payload":{...}}
//             {"error":"<text>","id":<int|null>,"ok":false}
//
// Keys are emitted sorted, numbers in shortest round-trip form.
//
//   init     {mixture:[{id,name,size,weight,train_tokens,eval_tokens}],
//             seed, eval_interval, dynamics?:<config text>}   -> {position}
//   train    {active:[id], exposure?:[real], delta}           -> {loss, position}
//   eval     {dataset}                                        -> {metric}
//   save     {ckpt}                                           -> {state}
//   load     {ckpt, state}                                    -> {position}
//   shutdown {}                                               -> {}
//
// Transports: a child process's stdin/stdout, or a TCP connection.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "msft/core.hpp"
#include "msft/dynamics.hpp"
#include "msft/trainer.hpp"

namespace msft {

class TransportError : public SessionError {
 public:
  using SessionError::SessionError;
};

inline nlohmann::json mixture_to_json(const MixtureSpec& m) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : m)
    out.push_back({{"id", s.id},
                   {"name", s.name},
                   {"size", s.size},
                   {"weight", s.weight},
                   {"train_tokens", s.train_tokens_per_epoch},
                   {"eval_tokens", s.eval_tokens}});
  return out;
}

inline MixtureSpec mixture_from_json(const nlohmann::json& j) {
  std::vector<SubDatasetSpec> subs;
  for (const auto& s : j) {
    SubDatasetSpec d;
    d.id = s.at("id").get<std::string>();
    d.name = s.value("name", d.id);
    d.size = s.at("size").get<std::int64_t>();
    d.weight = s.value("weight", 1.0);
    d.train_tokens_per_epoch = s.value("train_tokens", std::int64_t{0});
    d.eval_tokens = s.value("eval_tokens", std::int64_t{0});
    subs.push_back(std::move(d));
  }
  return MixtureSpec(std::move(subs));
}

// Serves one session. Each handle() call consumes one request line and
// returns one response line.
class ProtocolServer {
 public:
  using Factory = std::function<std::unique_ptr<TrainerSession>()>;
  // Dynamics used when init carries none.
  using DefaultDynamics = std::function<DynamicsConfig(const SessionSetup&)>;

  explicit ProtocolServer(Factory factory = default_factory(), DefaultDynamics fallback = default_dynamics())
      : factory_(std::move(factory)), fallback_(std::move(fallback)) {}

  static Factory default_factory() {
    return [] { return std::unique_ptr<TrainerSession>(std::make_unique<SimulatorSession>()); };
  }
  static DefaultDynamics default_dynamics() {
    return [](const SessionSetup& s) { return sample_dynamics(s.seed, s.mixture, {0.5, 3.0}, {s.eval_interval}); };
  }

  bool finished() const { return finished_; }

  std::string handle(const std::string& line) {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      return failure(nullptr, std::string("parse error: ") + e.what());
    }
    nlohmann::json id = nullptr;
    if (req.is_object() && req.contains("id") && req["id"].is_number_integer()) id = req["id"];
    if (!req.is_object() || id.is_null() || !req.contains("cmd") || !req["cmd"].is_string())
      return failure(id, "parse error: request needs integer id and string cmd");
    const auto cmd = req["cmd"].get<std::string>();
    const nlohmann::json args = req.value("args", nlohmann::json::object());
    try {
      return success(id, dispatch(cmd, args));
    } catch (const nlohmann::json::exception& e) {
      return failure(id, std::string("bad arguments: ") + e.what());
    } catch (const std::exception& e) {
      return failure(id, e.what());
    }
  }

 private:
  nlohmann::json dispatch(const std::string& cmd, const nlohmann::json& args) {
    if (cmd == "init") {
      if (session_) throw SessionError("already initialized");
      SessionSetup setup;
      setup.mixture = mixture_from_json(args.at("mixture"));
      setup.seed = args.value("seed", std::uint64_t{20});
      setup.eval_interval = args.value("eval_interval", 0.25);
      if (args.contains("dynamics")) setup.dynamics = dynamics_from_text(args.at("dynamics").get<std::string>());
      else if (fallback_) setup.dynamics = fallback_(setup);
      auto s = factory_();
      s->init(setup);
      session_ = std::move(s);
      return {{"position", session_->position()}};
    }
    if (cmd == "shutdown") {
      finished_ = true;
      return nlohmann::json::object();
    }
    if (cmd != "train" && cmd != "eval" && cmd != "save" && cmd != "load") throw SessionError("unknown command");
    if (!session_) throw SessionError("not initialized");
    if (cmd == "train") {
      auto ids = args.at("active").get<std::vector<std::string>>();
      std::vector<double> exposure(ids.size(), 1.0);
      if (args.contains("exposure")) exposure = args.at("exposure").get<std::vector<double>>();
      if (exposure.size() != ids.size()) throw SessionError("exposure list must match active list");
      std::vector<ActiveDataset> active;
      for (std::size_t i = 0; i < ids.size(); ++i) active.push_back({ids[i], exposure[i]});
      double loss = session_->train(active, args.at("delta").get<double>());
      return {{"loss", loss}, {"position", session_->position()}};
    }
    if (cmd == "eval") return {{"metric", session_->evaluate(args.at("dataset").get<std::string>())}};
    if (cmd == "save") return {{"state", session_->save(args.at("ckpt").get<std::string>())}};
    session_->load(args.at("ckpt").get<std::string>(), args.at("state").get<std::string>());
    return {{"position", session_->position()}};
  }

  static std::string success(const nlohmann::json& id, nlohmann::json payload) {
    return nlohmann::json{{"id", id}, {"ok", true}, {"payload", std::move(payload)}}.dump();
  }
  static std::string failure(const nlohmann::json& id, const std::string& error) {
    return nlohmann::json{{"id", id}, {"ok", false}, {"error", error}}.dump();
  }

  Factory factory_;
  DefaultDynamics fallback_;
  std::unique_ptr<TrainerSession> session_;
  bool finished_ = false;
};

class LineChannel {
 public:
  virtual ~LineChannel() = default;
  // nullopt on end of stream.
  virtual std::optional<std::string> read_line() = 0;
  virtual void write_line(const std::string& line) = 0;
};

// In-memory channel straight into a server; used by tests and for
// conformance runs without a transport.
class LoopbackChannel final : public LineChannel {
 public:
  explicit LoopbackChannel(std::shared_ptr<ProtocolServer> server) : server_(std::move(server)) {}

  std::optional<std::string> read_line() override {
    if (pending_.empty()) return std::nullopt;
    auto line = std::move(pending_.front());
    pending_.pop_front();
    return line;
  }
  void write_line(const std::string& line) override { pending_.push_back(server_->handle(line)); }

 private:
  std::shared_ptr<ProtocolServer> server_;
  std::deque<std::string> pending_;
};

class FdChannel : public LineChannel {
 public:
  FdChannel(int read_fd, int write_fd, bool socket = false) : in_(read_fd), out_(write_fd), socket_(socket) {}
  ~FdChannel() override { close_fds(); }
  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;

  std::optional<std::string> read_line() override {
    for (;;) {
      auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        auto line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      ssize_t n = ::read(in_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return std::nullopt;
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void write_line(const std::string& line) override {
    std::string data = line + '\n';
    std::size_t off = 0;
    while (off < data.size()) {
      ssize_t n = socket_ ? ::send(out_, data.data() + off, data.size() - off, MSG_NOSIGNAL)
                          : ::write(out_, data.data() + off, data.size() - off);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw TransportError("transport closed");
      off += static_cast<std::size_t>(n);
    }
  }

 protected:
  void close_fds() {
    if (out_ >= 0 && out_ != in_) ::close(out_);
    if (in_ >= 0) ::close(in_);
    in_ = out_ = -1;
  }

  int in_;
  int out_;
  bool socket_;
  std::string buf_;
};

// Runs `command` through /bin/sh with its stdin/stdout connected to us.
class SubprocessChannel final : public FdChannel {
 public:
  static std::unique_ptr<SubprocessChannel> spawn(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw TransportError("pipe failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw TransportError("pipe failed");
    }
    ::signal(SIGPIPE, SIG_IGN);
    pid_t pid = ::fork();
    if (pid < 0) throw TransportError("fork failed");
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    return std::unique_ptr<SubprocessChannel>(new SubprocessChannel(from_child[0], to_child[1], pid));
  }

  ~SubprocessChannel() override {
    close_fds();
    if (pid_ > 0) {
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

 private:
  SubprocessChannel(int read_fd, int write_fd, pid_t pid) : FdChannel(read_fd, write_fd), pid_(pid) {}
  pid_t pid_;
};

inline std::unique_ptr<FdChannel> tcp_connect(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw TransportError("cannot resolve " + host);
  int fd = -1;
  for (auto* p = res; p; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + host + ":" + std::to_string(port));
  return std::make_unique<FdChannel>(fd, fd, true);
}

// Answers requests until shutdown or end of stream.
inline void serve(LineChannel& channel, ProtocolServer& server) {
  while (!server.finished()) {
    auto line = channel.read_line();
    if (!line) return;
    if (line->empty()) continue;
    channel.write_line(server.handle(*line));
  }
}

// Listening socket; every accepted connection gets its own thread and its
// own session.
class TcpTrainerServer {
 public:
  explicit TcpTrainerServer(std::uint16_t port, ProtocolServer::Factory factory = ProtocolServer::default_factory())
      : factory_(std::move(factory)) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw TransportError("socket failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 16) != 0) {
      ::close(fd_);
      throw TransportError("cannot listen on port " + std::to_string(port));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  ~TcpTrainerServer() {
    stop();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

  std::uint16_t port() const { return port_; }

  // Accepts connections until stop() or `max_connections` were served
  // (0 = unlimited).
  void run(std::size_t max_connections = 0) {
    std::size_t served = 0;
    while (!stopping_) {
      int c = ::accept(fd_, nullptr, nullptr);
      if (c < 0) {
        if (errno == EINTR) continue;
        return;
      }
      workers_.emplace_back([c, factory = factory_] {
        FdChannel ch(c, c, true);
        ProtocolServer server(factory);
        try {
          serve(ch, server);
        } catch (const TransportError&) {
        }
      });
      if (max_connections && ++served >= max_connections) return;
    }
  }

  void stop() {
    stopping_ = true;
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  ProtocolServer::Factory factory_;
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::vector<std::thread> workers_;
};

// Scheduler-side session talking to a remote trainer.
class RemoteSession final : public TrainerSession {
 public:
  explicit RemoteSession(std::unique_ptr<LineChannel> channel) : channel_(std::move(channel)) {}

  ~RemoteSession() override {
    if (!broken_ && channel_) {
      try {
        call("shutdown", nlohmann::json::object());
      } catch (const std::exception&) {
      }
    }
  }

  void init(const SessionSetup& setup) override {
    nlohmann::json args = {{"mixture", mixture_to_json(setup.mixture)},
                           {"seed", setup.seed},
                           {"eval_interval", setup.eval_interval}};
    if (setup.dynamics) args["dynamics"] = dynamics_to_text(*setup.dynamics);
    position_ = call("init", args).at("position").get<double>();
  }

  double train(std::span<const ActiveDataset> active, double delta) override {
    std::vector<std::string> ids;
    std::vector<double> exposure;
    bool plain = true;
    for (const auto& a : active) {
      ids.push_back(a.id);
      exposure.push_back(a.exposure);
      plain = plain && a.exposure == 1.0;
    }
    nlohmann::json args = {{"active", ids}, {"delta", delta}};
    if (!plain) args["exposure"] = exposure;
    auto p = call("train", args);
    position_ = p.at("position").get<double>();
    return p.at("loss").get<double>();
  }

  double evaluate(const DatasetId& dataset) override {
    return call("eval", {{"dataset", dataset}}).at("metric").get<double>();
  }

  std::string save(const std::string& ckpt) override {
    return call("save", {{"ckpt", ckpt}}).at("state").get<std::string>();
  }

  void load(const std::string& ckpt, const std::string& state) override {
    position_ = call("load", {{"ckpt", ckpt}, {"state", state}}).at("position").get<double>();
  }

  double position() const override { return position_; }
  bool broken() const { return broken_; }

 private:
  nlohmann::json call(const std::string& cmd, const nlohmann::json& args) {
    if (broken_) throw TransportError("session aborted");
    const auto id = next_id_++;
    std::optional<std::string> line;
    try {
      channel_->write_line(nlohmann::json{{"id", id}, {"cmd", cmd}, {"args", args}}.dump());
      line = channel_->read_line();
    } catch (const TransportError&) {
      broken_ = true;
      throw;
    }
    if (!line) {
      broken_ = true;
      throw TransportError("transport closed during " + cmd);
    }
    nlohmann::json resp;
    try {
      resp = nlohmann::json::parse(*line);
    } catch (const nlohmann::json::exception&) {
      broken_ = true;
      throw TransportError("malformed response to " + cmd);
    }
    if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_number_integer() ||
        resp["id"].get<std::int64_t>() != id) {
      broken_ = true;
      throw TransportError("response id does not match request id");
    }
    if (!resp.contains("ok") || resp["ok"] != true) {
      const auto& err = resp.contains("error") ? resp["error"] : nlohmann::json("remote error");
      throw SessionError(err.is_string() ? err.get<std::string>() : err.dump());
    }
    return resp.value("payload", nlohmann::json::object());
  }

  std::unique_ptr<LineChannel> channel_;
  std::int64_t next_id_ = 1;
  double position_ = 0.0;
  bool broken_ = false;
};

}  // namespace msft
