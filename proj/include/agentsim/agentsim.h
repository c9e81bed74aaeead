/* C interface to the agentsim runtime. Every function returns an as_status;
 * on failure as_last_error() describes the most recent error on the calling
 * thread. Strings returned through char** are owned by the caller and are
 * released with as_string_free. */
#ifndef AGENTSIM_H
#define AGENTSIM_H

#include <stdint.h>

#if defined(AGENTSIM_BUILDING)
#define AS_API __attribute__((visibility("default")))
#else
#define AS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values match agentsim::ErrorCode. */
typedef enum as_status {
  AS_OK = 0,
  AS_INVALID_ARGUMENT = 1,
  AS_MALFORMED_PAYLOAD = 2,
  AS_FRAME_TOO_LARGE = 3,
  AS_TRUNCATED_FRAME = 4,
  AS_TIMEOUT = 5,
  AS_CONNECTION_REFUSED = 6,
  AS_CONNECTION_CLOSED = 7,
  AS_AGENT_NOT_FOUND = 8,
  AS_TASK_NOT_FOUND = 9,
  AS_BAD_FRAME = 10,
  AS_CAPACITY_EXCEEDED = 11,
  AS_INTERNAL = 12,
  AS_UNKNOWN_AGENT_KIND = 13,
  AS_BIND_FAILURE = 14,
  AS_KEY_NOT_FOUND = 15,
  AS_ACCESS_DENIED = 16,
  AS_DUPLICATE_FUNCTION = 17,
  AS_UNKNOWN_FUNCTION = 18,
  AS_INVOCATION_FAILED = 19,
  AS_CYCLE_DETECTED = 20,
  AS_PARSE_ERROR = 21,
  AS_INVALID_PROPORTIONS = 22,
  AS_BACKEND_ERROR = 23,
  AS_MISSING_BACKGROUND_TAG = 24,
  AS_AUTH_ERROR = 25,
  AS_MISSING_WINNER = 26,
  AS_MISSING_BACKGROUND = 27,
  AS_MISSING_GROUP_INFO = 28,
  AS_UNPARSEABLE_REPORT = 29,
  AS_OUT_OF_RANGE_REPORT = 30,
  AS_EMPTY_REPORTS = 31,
  AS_IO_ERROR = 32,
  AS_DUPLICATE_ADDRESS = 33,
  AS_SERVER_DEAD = 34,
  AS_SERVER_NOT_FOUND = 35,
  AS_CONFIG_ERROR = 36
} as_status;

typedef struct as_server as_server;
typedef struct as_hub as_hub;
typedef struct as_agent as_agent;

AS_API const char *as_status_name(as_status status);
AS_API const char *as_last_error(void);
AS_API void as_string_free(char *s);

/* Logging threshold: "trace", "debug", "info", "warn", "error" or "off". */
AS_API as_status as_set_log_level(const char *level);

/* Agent servers. config_json holds the keys listen, mode, capacity, workers,
 * hub, child_executable, child_mode, heartbeat_ms and task_ttl_ms; all are
 * optional. */
AS_API as_status as_server_start(const char *config_json, as_server **out);
AS_API int as_server_port(const as_server *server);
AS_API as_status as_server_status(const as_server *server, char **out_json);
AS_API as_status as_server_wait(as_server *server);
AS_API as_status as_server_stop(as_server *server);
AS_API void as_server_free(as_server *server);
/* Starts a server and blocks until SIGTERM or SIGINT. */
AS_API as_status as_server_run(const char *config_json);

/* Hub. ui_dir may be NULL. */
AS_API as_status as_hub_start(const char *host, int port, const char *ui_dir, as_hub **out);
AS_API int as_hub_port(const as_hub *hub);
AS_API as_status as_hub_stop(as_hub *hub);
AS_API void as_hub_free(as_hub *hub);
/* Starts a hub and blocks until SIGTERM or SIGINT. */
AS_API as_status as_hub_run(const char *host, int port, const char *ui_dir);

/* Agents. def_json is {"name", "kind", "params"}. */
AS_API as_status as_agent_spawn(const char *def_json, as_agent **out);
/* Places the agent's definition on the server at "HOST:PORT". */
AS_API as_status as_agent_to_dist(const as_agent *agent, const char *addr, as_agent **out);
/* input_json is a message object or a bare string used as content. Blocks
 * until the reply is available and returns it as a message object. */
AS_API as_status as_agent_call(const as_agent *agent, const char *input_json, char **out_json);
AS_API as_status as_agent_stop(const as_agent *agent);
AS_API void as_agent_free(as_agent *agent);

/* Runs a full game and returns the per-round results. */
AS_API as_status as_simulation_run(const char *config_json, char **out_json);

/* Samples profiles from a YAML population config. */
AS_API as_status as_population_sample(const char *yaml, uint64_t seed, int exact_quota,
                                      char **out_json);

#ifdef __cplusplus
}
#endif

#endif
