//! Builds the article corpus: archive and search clients for the two news
//! sources, LLM-based filtering and caption generation, and a fixture layer
//! that records and replays every HTTP exchange for offline runs.

pub mod error;
pub mod fixture;
pub mod guardian;
pub mod http;
pub mod ingest;
pub mod keywords;
pub mod llm;
pub mod nyt;

pub use error::{CorpusError, Result};
pub use fixture::{FixtureMode, FixtureTransport};
pub use guardian::{GuardianClient, GuardianQuery};
pub use http::{HttpRequest, HttpResponse, LiveTransport, RetryPolicy, Transport};
pub use ingest::{ingest_guardian, ingest_nyt, merge_articles, YearMonth};
pub use keywords::{CapitalizedPhrases, KeywordProvider};
pub use llm::{enrich_all, LlmClient, LlmEndpointConfig};
pub use nyt::NytClient;
