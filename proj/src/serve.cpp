#include <iostream>

#include "bcalign/error.hpp"
#include "bcalign/explorer.hpp"
#include "httplib.h"

namespace bcalign::explorer {

void serve(const Service& service, const ServeOptions& options) {
  httplib::Server server;
  server.Get(R"(/api/.*)", [&service](const httplib::Request& req, httplib::Response& res) {
    const Response r = service.get(req.path, req.params);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  });
  if (options.static_dir && !server.set_mount_point("/", options.static_dir->string())) {
    throw Error(ErrorKind::IoError, "static directory not found: " + options.static_dir->string());
  }
  std::cerr << "serving " << service.bundle().points.size() << " points on http://" << options.host << ':'
            << options.port << '\n';
  if (!server.listen(options.host, options.port)) {
    throw Error(ErrorKind::IoError, "cannot bind " + options.host + ":" + std::to_string(options.port));
  }
}

}  // namespace bcalign::explorer
