//! Branch selection from reasoning features and retrieval tool selection.

mod search_router;
mod tool_router;

pub use search_router::{route_search, Branch, RouteDecision, RouteRule};
pub use tool_router::{
    GatewayToolRouter, RoutingConfig, RuleToolRouter, ToolDecision, ToolDecisionParseError,
    ToolRouter,
};
