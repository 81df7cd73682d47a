//! Raw TCP intake of frame lines.
//!
//! Each accepted connection is one line source. Lines from one connection are
//! appended in order; interleaving across connections is unspecified. All
//! appends go through the shared session lock, so the store has one writer.

use std::future::Future;
use std::io;

use cosentinel_core::ingest::IngestStats;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinSet;

use crate::SharedSession;

async fn handle_connection(stream: TcpStream, session: SharedSession) -> io::Result<IngestStats> {
    let peer = stream.peer_addr().ok();
    let mut reader = BufReader::new(stream);
    let mut stats = IngestStats::default();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf).await? == 0 {
            break;
        }
        line_no += 1;
        let outcome = session
            .lock()
            .await
            .ingest_line(line_no, &buf)
            .map_err(io::Error::other)?;
        match outcome {
            cosentinel_core::ingest::LineOutcome::Accepted(_) => stats.accepted += 1,
            cosentinel_core::ingest::LineOutcome::Rejected(e) => {
                stats.rejected += 1;
                *stats.rejects_by_variant.entry(e.kind).or_default() += 1;
            }
            cosentinel_core::ingest::LineOutcome::Blank => {}
        }
    }
    session.lock().await.sync().map_err(io::Error::other)?;
    tracing::info!(?peer, accepted = stats.accepted, rejected = stats.rejected, "connection closed");
    Ok(stats)
}

/// Accepts frame connections until `max_conns` connections have been served
/// or `shutdown` resolves, then returns the combined counts. On shutdown,
/// connections still open are dropped.
pub async fn serve_frames<F>(
    listener: TcpListener,
    session: SharedSession,
    max_conns: Option<usize>,
    shutdown: F,
) -> io::Result<IngestStats>
where
    F: Future<Output = ()>,
{
    let mut tasks = JoinSet::new();
    let mut accepted = 0usize;
    let mut total = IngestStats::default();
    let mut first_error = None;
    tokio::pin!(shutdown);

    let mut record = |res: Result<io::Result<IngestStats>, tokio::task::JoinError>, total: &mut IngestStats| match res {
        Ok(Ok(stats)) => total.merge(&stats),
        Ok(Err(e)) => {
            tracing::error!("frame connection failed: {e}");
            first_error.get_or_insert(e);
        }
        Err(e) => {
            tracing::error!("frame connection task failed: {e}");
        }
    };

    loop {
        if max_conns.is_some_and(|max| accepted >= max) {
            while let Some(res) = tasks.join_next().await {
                record(res, &mut total);
            }
            break;
        }
        tokio::select! {
            conn = listener.accept() => {
                let (stream, peer) = conn?;
                tracing::info!(%peer, "frame connection opened");
                accepted += 1;
                tasks.spawn(handle_connection(stream, session.clone()));
            }
            Some(res) = tasks.join_next(), if !tasks.is_empty() => record(res, &mut total),
            _ = &mut shutdown => {
                tasks.abort_all();
                while let Some(res) = tasks.join_next().await {
                    if !res.as_ref().is_err_and(|e| e.is_cancelled()) {
                        record(res, &mut total);
                    }
                }
                break;
            }
        }
    }

    let mut session = session.lock().await;
    session.sync().map_err(io::Error::other)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(total),
    }
}
