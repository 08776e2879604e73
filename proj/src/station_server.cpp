#include "airship/station.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace airship::station {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

struct Shared {
  StationHub& hub;
  ServerConfig cfg;
  CommandHandler handler;
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, Shared& shared) : ws_(std::move(socket)), shared_(shared) {}

  ~WsSession() {
    if (id_ != 0) shared_.hub.disconnect(id_);
  }

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    std::weak_ptr<WsSession> weak = shared_from_this();
    auto exec = ws_.get_executor();
    id_ = shared_.hub.connect([weak, exec] {
      asio::post(exec, [weak] {
        if (auto s = weak.lock()) s->pump();
      });
    });
    read();
  }

  void pump() {
    if (writing_ || closed_) return;
    auto m = shared_.hub.pop(id_);
    if (!m) return;
    writing_ = true;
    out_ = encode(*m);
    ws_.text(true);
    ws_.async_write(asio::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) {
        self->closed_ = true;
        return;
      }
      self->pump();
    });
  }

  void read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        return;
      }
      self->on_frame();
      self->read();
    });
  }

  void protocol_error(const std::string& reason, std::optional<std::int64_t> seq = {}) {
    Json f = {{"event", "protocol_error"}, {"reason", reason}};
    if (seq) f["seq"] = *seq;
    shared_.hub.send_to(id_, "event", 0, std::move(f));
  }

  void on_frame() {
    const std::string text = beast::buffers_to_string(in_.data());
    in_.consume(in_.size());
    if (!ws_.got_text()) {
      protocol_error("binary frames are not supported");
      return;
    }
    Message m;
    try {
      m = decode(text);
    } catch (const ProtocolError& e) {
      protocol_error(e.what());
      return;
    }
    if (!shared_.hub.accept_inbound_seq(id_, m.seq)) {
      protocol_error("seq must be strictly increasing", m.seq);
      return;
    }
    if (!is_client_kind(m.kind)) {
      shared_.hub.send_to(id_, "event", m.time_us,
                          {{"event", "ack"},
                           {"seq", m.seq},
                           {"client", id_},
                           {"command", m.kind},
                           {"accepted", false},
                           {"reason", "unknown kind"}});
      return;
    }
    if (shared_.handler) shared_.handler(id_, m);
  }

  websocket::stream<beast::tcp_stream> ws_;
  Shared& shared_;
  beast::flat_buffer in_;
  std::string out_;
  int id_{0};
  bool writing_{false};
  bool closed_{false};
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, Shared& shared) : stream_(std::move(socket)), shared_(shared) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->on_request();
    });
  }

  std::string path() const {
    std::string target(req_.target());
    const auto q = target.find('?');
    return q == std::string::npos ? target : target.substr(0, q);
  }

  void on_request() {
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      if (path() != "/ws") return respond(http::status::not_found, "text/plain", "not found\n");
      if (!shared_.cfg.token.empty() && query_token(target) != shared_.cfg.token) {
        return respond(http::status::unauthorized, "text/plain", "bad token\n");
      }
      std::make_shared<WsSession>(stream_.release_socket(), shared_)->run(std::move(req_));
      return;
    }
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      return respond(http::status::method_not_allowed, "text/plain", "method not allowed\n");
    }
    serve_static();
  }

  void serve_static() {
    std::string rel = path();
    if (rel.find("..") != std::string::npos || rel.find('\\') != std::string::npos) {
      return respond(http::status::bad_request, "text/plain", "bad path\n");
    }
    if (rel.empty() || rel.back() == '/') rel += "index.html";
    if (shared_.cfg.static_dir.empty()) return respond(http::status::not_found, "text/plain", "not found\n");
    const std::filesystem::path file = std::filesystem::path(shared_.cfg.static_dir) / rel.substr(1);
    std::ifstream in(file, std::ios::binary);
    if (!in || std::filesystem::is_directory(file)) {
      return respond(http::status::not_found, "text/plain", "not found\n");
    }
    std::ostringstream body;
    body << in.rdbuf();
    respond(http::status::ok, content_type_for(file.string()), body.str());
  }

  void respond(http::status status, const std::string& type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, "airship-station");
    res->set(http::field::content_type, type);
    res->keep_alive(req_.keep_alive());
    if (req_.method() == http::verb::head) {
      res->content_length(body.size());
    } else {
      res->body() = std::move(body);
      res->prepare_payload();
    }
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (res->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  Shared& shared_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

struct StationServer::Impl {
  Impl(StationHub& hub, ServerConfig cfg, CommandHandler handler)
      : shared{hub, std::move(cfg), std::move(handler)}, acceptor(ioc) {}

  void accept() {
    acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(socket), shared)->run();
      accept();
    });
  }

  Shared shared;
  asio::io_context ioc{1};
  tcp::acceptor acceptor;
  std::thread thread;
  unsigned short port{0};
};

StationServer::StationServer(StationHub& hub, ServerConfig cfg, CommandHandler handler)
    : impl_(std::make_unique<Impl>(hub, std::move(cfg), std::move(handler))) {}

StationServer::~StationServer() { stop(); }

void StationServer::start() {
  auto& i = *impl_;
  beast::error_code ec;
  const auto address = asio::ip::make_address(i.shared.cfg.address, ec);
  if (ec) throw std::runtime_error("invalid address '" + i.shared.cfg.address + "'");
  const tcp::endpoint ep(address, i.shared.cfg.port);
  i.acceptor.open(ep.protocol(), ec);
  if (!ec) i.acceptor.bind(ep, ec);
  if (!ec) i.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) {
    throw std::runtime_error("cannot listen on " + i.shared.cfg.address + ":" +
                             std::to_string(i.shared.cfg.port) + ": " + ec.message());
  }
  i.port = i.acceptor.local_endpoint().port();
  i.accept();
  i.thread = std::thread([&i] { i.ioc.run(); });
}

void StationServer::stop() {
  if (!impl_) return;
  impl_->ioc.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

unsigned short StationServer::port() const { return impl_->port; }

}  // namespace airship::station
