#include "otgym/server.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "otgym/protocol.hpp"

namespace otgym {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;
namespace proto = protocol;

namespace {

constexpr std::size_t kMaxQueuedReplies = 1024;

std::string mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  return "application/octet-stream";
}

/// A message whose payload is already serialized; the envelope is built at send
/// time so every connection numbers its own stream.
struct Outgoing {
  std::string type;
  std::shared_ptr<const std::string> payload;
};

std::shared_ptr<const std::string> shared_text(const json& j) { return std::make_shared<const std::string>(j.dump()); }

std::string envelope(const Outgoing& o, std::uint64_t seq) {
  std::string s = R"({"type":")";
  s += o.type;
  s += R"(","seq":)";
  s += std::to_string(seq);
  s += R"(,"payload":)";
  s += *o.payload;
  s += '}';
  return s;
}

enum class Role { Pending, Operator, Observer };

struct Command {
  std::string type;
  json payload;
  std::uint64_t connection = 0;
  std::uint64_t seq = 0;
};

}  // namespace

struct Server::Impl {
  class Connection;

  ServerConfig config;
  std::string session_id;
  std::unique_ptr<Session> session;
  json welcome;  // static part of the hello reply

  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread io_thread;
  std::thread sim_thread;
  std::atomic<bool> stopping{false};
  std::mutex stop_mutex;
  std::condition_variable stop_cv;
  bool stopped = false;

  // Inbound, written on the I/O thread, read on the simulation thread.
  LatestSlot<OperatorInput> input_slot;
  std::mutex command_mutex;
  std::deque<Command> commands;
  std::atomic<int> mode_mirror{0};

  // Simulation-thread state.
  std::ofstream trace_file;
  std::ofstream step_file;
  std::unique_ptr<TraceWriter> trace;

  // I/O-thread state.
  std::map<std::uint64_t, std::weak_ptr<Connection>> connections;
  std::optional<std::uint64_t> operator_id;
  std::uint64_t next_connection = 1;

  std::atomic<std::uint64_t> ticks{0};
  std::atomic<std::uint64_t> broadcasts{0};
  std::atomic<std::uint64_t> open_connections{0};

  // -------------------------------------------------------------------------
  class Connection : public std::enable_shared_from_this<Connection> {
   public:
    Connection(tcp::socket&& socket, Impl& impl, std::uint64_t id) : ws_(std::move(socket)), impl_(impl), id_(id) {}

    std::uint64_t id() const { return id_; }
    Role role = Role::Pending;
    std::optional<std::uint64_t> last_in_seq;

    void run(http::request<http::string_body> req) {
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->impl_.attach(self);
        self->read();
      });
    }

    void reply(const std::string& type, const json& payload) {
      if (closed_) return;
      if (replies_.size() >= kMaxQueuedReplies) {
        close();  // a client this far behind is not reading
        return;
      }
      replies_.push_back({type, shared_text(payload)});
      pump();
    }

    void push_state(const Outgoing& state, const Outgoing& haptic) {
      state_ = state;
      haptic_ = haptic;
      pump();
    }

    void close() {
      if (closed_) return;
      closed_ = true;
      beast::error_code ec;
      beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
      beast::get_lowest_layer(ws_).socket().close(ec);
      impl_.detach(id_);
    }

    /// Sends what is queued, then a close frame with the given code.
    void close_after_flush(websocket::close_code code, std::string reason) {
      if (closing_) return;
      closing_ = true;
      close_reason_ = websocket::close_reason(code, reason);
      pump();
    }

   private:
    void read() {
      ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->closed_ = true;
          self->impl_.detach(self->id_);
          return;
        }
        const std::string text = beast::buffers_to_string(self->buffer_.data());
        self->buffer_.consume(self->buffer_.size());
        self->impl_.handle(*self, text);
        if (!self->closed_) self->read();
      });
    }

    void pump() {
      if (writing_ || closed_) return;
      Outgoing next;
      if (!replies_.empty()) {
        next = std::move(replies_.front());
        replies_.pop_front();
      } else if (state_) {
        next = std::move(*state_);
        state_.reset();
      } else if (haptic_) {
        next = std::move(*haptic_);
        haptic_.reset();
      } else {
        if (closing_) {
          // Everything queued has gone out; end with a proper close frame.
          writing_ = true;
          ws_.async_close(close_reason_, [self = shared_from_this()](beast::error_code) {
            self->writing_ = false;
            self->close();
          });
        }
        return;
      }
      out_ = envelope(next, ++out_seq_);
      writing_ = true;
      ws_.text(true);
      ws_.async_write(net::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        self->writing_ = false;
        if (ec) {
          self->closed_ = true;
          self->impl_.detach(self->id_);
          return;
        }
        self->pump();
      });
    }

    websocket::stream<beast::tcp_stream> ws_;
    Impl& impl_;
    std::uint64_t id_;
    beast::flat_buffer buffer_;
    std::deque<Outgoing> replies_;
    std::optional<Outgoing> state_;
    std::optional<Outgoing> haptic_;
    std::string out_;
    std::uint64_t out_seq_ = 0;
    bool writing_ = false;
    bool closed_ = false;
    bool closing_ = false;
    websocket::close_reason close_reason_;
  };

  // -------------------------------------------------------------------------
  class HttpSession : public std::enable_shared_from_this<HttpSession> {
   public:
    HttpSession(tcp::socket&& socket, Impl& impl) : stream_(std::move(socket)), impl_(impl) {}

    void run() {
      stream_.expires_after(std::chrono::seconds(30));
      http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return;
        self->dispatch();
      });
    }

   private:
    void dispatch() {
      if (websocket::is_upgrade(req_)) {
        if (req_.target() == proto::kEndpoint) {
          stream_.expires_never();
          const std::uint64_t id = impl_.next_connection++;
          std::make_shared<Connection>(stream_.release_socket(), impl_, id)->run(std::move(req_));
          return;
        }
        return respond(http::status::not_found, "text/plain", "unknown WebSocket endpoint\n");
      }
      if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
        return respond(http::status::method_not_allowed, "text/plain", "method not allowed\n");
      }
      std::string target(req_.target());
      if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
      if (target.empty() || target[0] != '/' || target.find("..") != std::string::npos) {
        return respond(http::status::bad_request, "text/plain", "bad path\n");
      }
      if (target.back() == '/') target += "index.html";
      const std::filesystem::path file = impl_.static_root() / target.substr(1);
      std::ifstream in(file, std::ios::binary);
      if (!in || std::filesystem::is_directory(file)) return respond(http::status::not_found, "text/plain", "not found\n");
      std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      respond(http::status::ok, mime_type(file), std::move(body));
    }

    void respond(http::status status, const std::string& type, std::string body) {
      auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
      res->set(http::field::server, "otgym");
      res->set(http::field::content_type, type);
      res->keep_alive(false);
      const bool head = req_.method() == http::verb::head;
      res->content_length(body.size());
      if (!head) res->body() = std::move(body);
      http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
        beast::error_code ec;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      });
    }

    beast::tcp_stream stream_;
    Impl& impl_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
  };

  // -------------------------------------------------------------------------
  std::filesystem::path static_root() const {
    return config.static_dir.empty() ? data_dir() / "www" : config.static_dir;
  }

  void accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (!stopping) accept();
        return;
      }
      std::make_shared<HttpSession>(std::move(socket), *this)->run();
      accept();
    });
  }

  void attach(const std::shared_ptr<Connection>& c) {
    connections[c->id()] = c;
    ++open_connections;
  }

  void detach(std::uint64_t id) {
    if (connections.erase(id) == 0) return;
    --open_connections;
    if (operator_id == id) operator_id.reset();
  }

  template <typename F>
  void for_each_greeted(F&& f) {
    for (auto it = connections.begin(); it != connections.end();) {
      auto c = it->second.lock();
      if (!c) {
        it = connections.erase(it);
        continue;
      }
      ++it;
      if (c->role != Role::Pending) f(*c);
    }
  }

  void reply_to(std::uint64_t id, const std::string& type, const json& payload) {
    const auto it = connections.find(id);
    if (it == connections.end()) return;
    if (auto c = it->second.lock()) c->reply(type, payload);
  }

  static json ack(std::uint64_t ref_seq, const std::string& of, bool applied, const std::string& note = {}) {
    json p = {{"ref_seq", ref_seq}, {"of", of}, {"applied", applied}};
    p["note"] = note.empty() ? json(nullptr) : json(note);
    return p;
  }

  /// I/O thread: one inbound text frame.
  void handle(Connection& c, const std::string& text) {
    proto::Envelope e;
    try {
      e = proto::parse_envelope(text);
    } catch (const proto::ProtocolError& err) {
      c.reply(proto::kError, proto::error_payload(err.code(), err.what()));
      return;
    }
    if (c.last_in_seq && e.seq <= *c.last_in_seq) {
      c.reply(proto::kError, proto::error_payload(proto::ErrorCode::BadSeq,
                                                  "seq must increase; last was " + std::to_string(*c.last_in_seq), e.seq));
      return;
    }
    c.last_in_seq = e.seq;
    if (!proto::is_client_type(e.type)) {
      c.reply(proto::kError, proto::error_payload(proto::ErrorCode::UnknownType, "unknown message type '" + e.type + "'", e.seq));
      return;
    }
    try {
      if (e.type == proto::kHello) return on_hello(c, e);
      if (c.role == Role::Pending) {
        throw proto::ProtocolError(proto::ErrorCode::HelloRequired, "send hello first");
      }
      if (c.role != Role::Operator) {
        throw proto::ProtocolError(proto::ErrorCode::NotOperator, "this client observes; another client operates");
      }
      if (e.type == proto::kOperatorInput) {
        const Vec2 v = proto::parse_operator_input(e.payload);
        if (static_cast<OperatingMode>(mode_mirror.load()) == OperatingMode::Autonomous) {
          c.reply(proto::kAck, ack(e.seq, e.type, false, "autonomous mode ignores operator input"));
          return;
        }
        input_slot.put(OperatorInput{v, 0.0, InputSource::Ui});
        c.reply(proto::kAck, ack(e.seq, e.type, true));
        return;
      }
      // Validate here so malformed commands are refused without a round trip.
      proto::validate_client_message(e);
      std::lock_guard lock(command_mutex);
      commands.push_back({e.type, e.payload, c.id(), e.seq});
    } catch (const proto::ProtocolError& err) {
      c.reply(proto::kError, proto::error_payload(err.code(), err.what(), e.seq));
    }
  }

  void on_hello(Connection& c, const proto::Envelope& e) {
    const int version = proto::parse_client_hello(e.payload);
    if (version != proto::kVersion) {
      c.reply(proto::kError, proto::error_payload(proto::ErrorCode::VersionMismatch,
                                                  "server speaks protocol " + std::to_string(proto::kVersion), e.seq));
      c.close_after_flush(websocket::close_code::policy_error, "protocol version");
      return;
    }
    if (c.role == Role::Pending) {
      if (!operator_id) {
        operator_id = c.id();
        c.role = Role::Operator;
      } else {
        c.role = Role::Observer;
      }
    }
    json p = welcome;
    p["connection"] = c.id();
    p["role"] = c.role == Role::Operator ? "operator" : "observer";
    p["mode"] = to_string(static_cast<OperatingMode>(mode_mirror.load()));
    c.reply(proto::kHello, p);
  }

  // -------------------------------------------------------------------------
  // Simulation thread

  void close_trace() {
    trace.reset();
    if (trace_file.is_open()) trace_file.close();
    if (step_file.is_open()) step_file.close();
  }

  void open_trace() {
    const auto& dir = *config.record_dir;
    std::filesystem::create_directories(dir);
    char name[96];
    std::snprintf(name, sizeof name, "session-%s-ep%04llu", session_id.c_str(),
                  static_cast<unsigned long long>(session->episode_index()));
    trace_file.open(dir / (std::string(name) + ".trace.jsonl"));
    step_file.open(dir / (std::string(name) + ".steps.jsonl"));
    if (!trace_file || !step_file) throw std::runtime_error("cannot write traces under " + dir.string());
    trace = std::make_unique<TraceWriter>(trace_file, session->trace_header());
  }

  json session_state() const {
    return {{"mode", to_string(session->mode())},
            {"running", session->running()},
            {"episode", session->episode_index()},
            {"seed", session->seed()},
            {"tick", session->ticks()}};
  }

  void apply_command(const Command& cmd) {
    json extra;
    if (cmd.type == proto::kStart) {
      session->start();
    } else if (cmd.type == proto::kPause) {
      session->pause();
    } else if (cmd.type == proto::kReset) {
      close_trace();
      session->reset(proto::parse_reset(cmd.payload));
    } else if (cmd.type == proto::kModeChange) {
      session->set_mode(proto::parse_mode_change(cmd.payload));
      mode_mirror = static_cast<int>(session->mode());
    }
    json p = ack(cmd.seq, cmd.type, true);
    p["state"] = session_state();
    net::post(ioc, [this, id = cmd.connection, p = std::move(p)] { reply_to(id, proto::kAck, p); });
  }

  void broadcast_snapshot() {
    Outgoing state{proto::kStateUpdate, shared_text(session->state_payload())};
    Outgoing haptic{proto::kHapticUpdate, shared_text(session->haptic_payload())};
    ++broadcasts;
    net::post(ioc, [this, state = std::move(state), haptic = std::move(haptic)] {
      for_each_greeted([&](Connection& c) { c.push_state(state, haptic); });
    });
  }

  void sim_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(1.0 / config.session.tick_rate_hz));
    const auto bperiod = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(1.0 / config.session.broadcast_hz));
    auto next_tick = clock::now();
    auto next_broadcast = next_tick;
    while (!stopping) {
      std::deque<Command> pending;
      {
        std::lock_guard lock(command_mutex);
        pending.swap(commands);
      }
      for (const auto& cmd : pending) apply_command(cmd);

      const auto input = input_slot.take();
      const bool was_done = session->done();
      if (config.record_dir && !trace && session->running() && !was_done && session->ticks() == 0) open_trace();
      if (const auto rec = session->tick(input)) {
        ++ticks;
        if (trace) {
          trace->write(*rec);
          step_file << session->step_log().dump() << '\n';
        }
      }
      if (!was_done && session->done()) {
        close_trace();
        auto result = shared_text(session->episode_result_payload());
        net::post(ioc, [this, result] {
          for_each_greeted([&](Connection& c) { c.reply(proto::kEpisodeResult, json::parse(*result)); });
        });
      }
      const auto now = clock::now();
      if (now >= next_broadcast) {
        broadcast_snapshot();
        next_broadcast += bperiod;
        if (next_broadcast < now) next_broadcast = now + bperiod;
      }
      next_tick += period;
      if (next_tick < now - 10 * period) next_tick = now;  // fell far behind: do not burst
      std::this_thread::sleep_until(next_tick);
    }
    close_trace();
  }
};

Server::Server(ServerConfig config) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  std::random_device rd;
  impl_->session_id = hex64((static_cast<std::uint64_t>(rd()) << 32) ^ rd()).substr(8);
  impl_->session = std::make_unique<Session>(impl_->config.session);
  impl_->mode_mirror = static_cast<int>(impl_->session->mode());
  const Session& s = *impl_->session;
  const double dt = s.scenario().config.dt;
  impl_->welcome = {{"protocol", protocol::kVersion},
                    {"session", impl_->session_id},
                    {"scenario", s.scenario().name},
                    {"seed", s.seed()},
                    {"tick_rate_hz", impl_->config.session.tick_rate_hz},
                    {"broadcast_hz", impl_->config.session.broadcast_hz},
                    {"dt", dt},
                    {"increment_limit", operator_increment_limit(dt)},
                    {"blend", to_json(impl_->config.session.blend)},
                    {"chip", s.scenario().source.value("chip", json::object())},
                    {"path", s.path_payload()}};
}

Server::~Server() { stop(); }

void Server::start() {
  auto& d = *impl_;
  beast::error_code ec;
  const auto address = net::ip::make_address(d.config.address, ec);
  if (ec) throw std::runtime_error("bad listen address '" + d.config.address + "': " + ec.message());
  const tcp::endpoint endpoint{address, d.config.port};
  d.acceptor.open(endpoint.protocol(), ec);
  if (!ec) d.acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) d.acceptor.bind(endpoint, ec);
  if (!ec) d.acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) {
    throw std::runtime_error("cannot listen on " + d.config.address + ":" + std::to_string(d.config.port) + ": " +
                             ec.message());
  }
  d.accept();
  d.io_thread = std::thread([&d] { d.ioc.run(); });
  d.sim_thread = std::thread([&d] { d.sim_loop(); });
}

unsigned short Server::port() const {
  beast::error_code ec;
  const auto ep = impl_->acceptor.local_endpoint(ec);
  return ec ? 0 : ep.port();
}

void Server::stop() {
  auto& d = *impl_;
  if (d.stopping.exchange(true)) return;
  if (d.sim_thread.joinable()) d.sim_thread.join();
  net::post(d.ioc, [&d] {
    beast::error_code ec;
    d.acceptor.close(ec);
    std::vector<std::shared_ptr<Impl::Connection>> live;
    for (auto& [id, w] : d.connections) {
      if (auto c = w.lock()) live.push_back(c);
    }
    for (auto& c : live) c->close_after_flush(websocket::close_code::going_away, "server stopping");
  });
  // Let clients receive their close frames, but do not wait on slow ones.
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(1);
  while (d.open_connections > 0 && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  d.ioc.stop();
  if (d.io_thread.joinable()) d.io_thread.join();
  {
    std::lock_guard lock(d.stop_mutex);
    d.stopped = true;
  }
  d.stop_cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->stop_mutex);
  impl_->stop_cv.wait(lock, [this] { return impl_->stopped; });
}

ServerStats Server::stats() const {
  ServerStats s;
  s.ticks = impl_->ticks;
  s.broadcasts = impl_->broadcasts;
  s.dropped_inputs = impl_->input_slot.dropped();
  s.connections = impl_->open_connections;
  return s;
}

std::string Server::session_id() const { return impl_->session_id; }

}  // namespace otgym
