//! Live simulator over a WebSocket, one driver at a time.
//!
//! Every message is a JSON text frame. The client steers with `control`,
//! restarts with `reset`, stores the current episode with `save` and asks
//! for reward heatmaps with `reward_grid`. The server streams a `state`
//! frame every tick. A second simultaneous client gets a `busy` frame and
//! is closed.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use dmrl_core::reward::RewardModel;
use dmrl_core::rng::resolve_seed;
use dmrl_core::track::{
    features_at, lane_center, trained_scenarios, write_trajectories, Action, CarState, Features,
    Scenario, Simulation, Style, DT, FEATURE_DIM, W_MAX,
};
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::artifact::{self, in_file};
use crate::{exit, CliError, CliResult, ServeArgs};

const ACCEPT_POLL: Duration = Duration::from_millis(20);
const READ_TIMEOUT: Duration = Duration::from_millis(5);

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMsg {
    Control {
        v: f64,
        w: f64,
    },
    Reset {
        /// Inline scenario object or a path to a scenario file.
        #[serde(default)]
        scenario: Option<serde_json::Value>,
    },
    Save {
        style: Style,
    },
    RewardGrid {
        model_path: PathBuf,
        bounds: GridBounds,
        resolution: Resolution,
    },
}

#[derive(Debug, Deserialize)]
struct GridBounds {
    x: [f64; 2],
    y: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Resolution {
    Square(usize),
    Rect([usize; 2]),
}

#[derive(Debug, Serialize)]
struct Ego {
    x: f64,
    y: f64,
    theta: f64,
}

#[derive(Debug, Serialize)]
struct CarFrame {
    x: f64,
    y: f64,
    lane: usize,
    speed: f64,
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ServerMsg {
    State {
        t: f64,
        ego: Ego,
        cars: Vec<CarFrame>,
        /// `null` once the ego is off the road.
        features: Option<Features>,
        collided: bool,
    },
    Saved {
        path: String,
    },
    /// Rows run along y, columns along x; off-road cells are `null`.
    Grid {
        values: Vec<Vec<Option<f64>>>,
    },
    Busy {
        message: String,
    },
    Error {
        message: String,
    },
}

impl ServerMsg {
    fn error(message: impl Into<String>) -> Self {
        ServerMsg::Error {
            message: message.into(),
        }
    }

    fn to_message(&self) -> Message {
        Message::text(serde_json::to_string(self).expect("server frames serialize"))
    }
}

#[derive(Debug, Clone, Serialize)]
struct SaveRecord {
    command: &'static str,
    style: Style,
    scenario: Scenario,
    ticks: usize,
    collided: bool,
}

/// A bound listener plus what each session needs.
pub struct Server {
    listener: TcpListener,
    scenario: Scenario,
    out: PathBuf,
    shutdown: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(a: &ServeArgs) -> CliResult<Self> {
        let scenario = match &a.scenario {
            Some(path) => Scenario::from_json(&artifact::read_text(path)?).map_err(in_file(path))?,
            None => trained_scenarios(a.style, resolve_seed(a.seed)).swap_remove(0),
        };
        let listener = TcpListener::bind(("127.0.0.1", a.port)).map_err(|e| {
            let code = if e.kind() == ErrorKind::AddrInUse {
                exit::PORT_BUSY
            } else {
                exit::FAILURE
            };
            CliError::new(code, format!("cannot listen on port {}: {e}", a.port))
        })?;
        listener
            .set_nonblocking(true)
            .map_err(|e| CliError::new(exit::FAILURE, e.to_string()))?;
        Ok(Self {
            listener,
            scenario,
            out: a.out.clone(),
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Setting the flag makes [`Server::run`] return after the current
    /// session ends.
    pub fn shutdown_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    pub fn run(self) -> CliResult<()> {
        let active = Arc::new(AtomicBool::new(false));
        let mut sessions = Vec::new();
        while !self.shutdown.load(Ordering::SeqCst) {
            let stream = match self.listener.accept() {
                Ok((stream, _)) => stream,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    thread::sleep(ACCEPT_POLL);
                    continue;
                }
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            if stream.set_nonblocking(false).is_err() {
                continue;
            }
            if active.swap(true, Ordering::SeqCst) {
                thread::spawn(move || refuse(stream));
                continue;
            }
            let scenario = self.scenario.clone();
            let out = self.out.clone();
            let active = Arc::clone(&active);
            let shutdown = Arc::clone(&self.shutdown);
            sessions.push(thread::spawn(move || {
                if let Err(e) = session(stream, scenario, out, shutdown) {
                    log::warn!("session ended: {e}");
                }
                active.store(false, Ordering::SeqCst);
            }));
            sessions.retain(|h| !h.is_finished());
        }
        for h in sessions {
            let _ = h.join();
        }
        Ok(())
    }
}

pub fn serve(a: &ServeArgs) -> CliResult<i32> {
    let server = Server::bind(a)?;
    eprintln!("serving on ws://{}", server.local_addr());
    server.run()?;
    Ok(exit::OK)
}

fn refuse(stream: TcpStream) {
    if let Ok(mut ws) = tungstenite::accept(stream) {
        let busy = ServerMsg::Busy {
            message: "another session is active".into(),
        };
        let _ = ws.send(busy.to_message());
        let _ = ws.close(None);
        while ws.read().is_ok() {}
    }
}

/// Owns the socket: forwards parsed client frames to the simulation and
/// writes whatever the simulation sends back.
fn session(stream: TcpStream, scenario: Scenario, out: PathBuf, shutdown: Arc<AtomicBool>) -> Result<(), String> {
    let mut ws = tungstenite::accept(stream).map_err(|e| e.to_string())?;
    ws.get_mut()
        .set_read_timeout(Some(READ_TIMEOUT))
        .map_err(|e| e.to_string())?;
    let (to_sim, from_client) = mpsc::channel::<ClientMsg>();
    let (to_client, from_sim) = mpsc::channel::<ServerMsg>();
    let sim = thread::spawn(move || simulate(scenario, out, from_client, to_client));
    let result = pump(&mut ws, &to_sim, &from_sim, &shutdown);
    drop(to_sim);
    let _ = sim.join();
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}

fn pump(
    ws: &mut WebSocket<TcpStream>,
    to_sim: &Sender<ClientMsg>,
    from_sim: &Receiver<ServerMsg>,
    shutdown: &AtomicBool,
) -> Result<(), String> {
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        loop {
            match from_sim.try_recv() {
                Ok(msg) => ws.send(msg.to_message()).map_err(|e| e.to_string())?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => match serde_json::from_str::<ClientMsg>(&text) {
                Ok(msg) => {
                    if to_sim.send(msg).is_err() {
                        return Ok(());
                    }
                }
                Err(e) => ws
                    .send(ServerMsg::error(format!("bad frame: {e}")).to_message())
                    .map_err(|e| e.to_string())?,
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.to_string()),
        }
    }
}

struct Live {
    scenario: Scenario,
    sim: Simulation,
    control: Action,
    episode: usize,
}

impl Live {
    fn start(scenario: Scenario, episode: usize) -> Result<Self, String> {
        let sim = Simulation::new(scenario.clone(), episode).map_err(|e| e.to_string())?;
        let control = Action {
            v: scenario.style.nominal_speed(),
            w: 0.0,
        };
        Ok(Self {
            scenario,
            sim,
            control,
            episode,
        })
    }

    fn restart(&mut self, scenario: Scenario) -> Result<(), String> {
        *self = Self::start(scenario, self.episode + 1)?;
        Ok(())
    }

    fn frame(&self) -> ServerMsg {
        let s = self.sim.state();
        let width = self.scenario.lane_width;
        ServerMsg::State {
            t: self.sim.time(),
            ego: Ego {
                x: s.x,
                y: s.y,
                theta: s.theta,
            },
            cars: self
                .sim
                .traffic()
                .iter()
                .map(|c| CarFrame {
                    x: c.x,
                    y: lane_center(c.lane, width),
                    lane: c.lane,
                    speed: c.speed,
                })
                .collect(),
            features: self.sim.features(self.control.v).ok(),
            collided: self.sim.is_over(),
        }
    }
}

/// The fixed-rate tick loop. Ends when the connection side hangs up, which
/// discards any unsaved episode.
fn simulate(scenario: Scenario, out: PathBuf, inbox: Receiver<ClientMsg>, outbox: Sender<ServerMsg>) {
    let mut live = match Live::start(scenario, 0) {
        Ok(live) => live,
        Err(e) => {
            let _ = outbox.send(ServerMsg::error(e));
            return;
        }
    };
    let tick = Duration::from_secs_f64(DT);
    let mut next = Instant::now();
    loop {
        let now = Instant::now();
        if now >= next {
            if let Err(e) = live.sim.advance(live.control) {
                let _ = outbox.send(ServerMsg::error(e.to_string()));
            }
            if outbox.send(live.frame()).is_err() {
                return;
            }
            next += tick;
            if next < now {
                next = now + tick;
            }
            continue;
        }
        match inbox.recv_timeout(next - now) {
            Ok(msg) => {
                if let Some(reply) = handle(&mut live, &out, msg) {
                    if outbox.send(reply).is_err() {
                        return;
                    }
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

fn handle(live: &mut Live, out: &Path, msg: ClientMsg) -> Option<ServerMsg> {
    let result = match msg {
        ClientMsg::Control { v, w } => {
            if v.is_finite() && w.is_finite() {
                live.control = Action {
                    v: v.max(0.0),
                    w: w.clamp(-W_MAX, W_MAX),
                };
                return None;
            }
            Err(format!("control needs finite v and w, got v={v} w={w}"))
        }
        ClientMsg::Reset { scenario } => reset_scenario(live, scenario).and_then(|s| live.restart(s)).map(|_| None),
        ClientMsg::Save { style } => save(live, out, style).map(Some),
        ClientMsg::RewardGrid {
            model_path,
            bounds,
            resolution,
        } => reward_grid(live, &model_path, &bounds, &resolution).map(Some),
    };
    result.unwrap_or_else(|e| Some(ServerMsg::error(e)))
}

fn reset_scenario(live: &Live, scenario: Option<serde_json::Value>) -> Result<Scenario, String> {
    let text = match scenario {
        None => return Ok(live.scenario.clone()),
        Some(serde_json::Value::String(path)) => {
            std::fs::read_to_string(&path).map_err(|e| format!("cannot read {path}: {e}"))?
        }
        Some(inline) => inline.to_string(),
    };
    Scenario::from_json(&text).map_err(|e| e.to_string())
}

fn next_demo_path(out: &Path, style: Style) -> PathBuf {
    (0..)
        .map(|i| out.join(format!("demo-{style}-{i:03}.jsonl")))
        .find(|p| !p.exists())
        .expect("unbounded search finds a free name")
}

fn save(live: &mut Live, out: &Path, style: Style) -> Result<ServerMsg, String> {
    if live.sim.records().is_empty() {
        return Err("nothing recorded yet".into());
    }
    let path = next_demo_path(out, style);
    let file = artifact::create(&path).map_err(|e| e.message)?;
    write_trajectories(file, live.sim.records()).map_err(|e| e.to_string())?;
    let record = SaveRecord {
        command: "serve",
        style,
        scenario: live.scenario.clone(),
        ticks: live.sim.records().len(),
        collided: live.sim.is_over(),
    };
    artifact::write_sidecar(&path, &record).map_err(|e| e.message)?;
    live.restart(live.scenario.clone())?;
    Ok(ServerMsg::Saved {
        path: path.display().to_string(),
    })
}

fn reward_grid(live: &Live, model_path: &Path, bounds: &GridBounds, resolution: &Resolution) -> Result<ServerMsg, String> {
    let text = std::fs::read_to_string(model_path).map_err(|e| format!("cannot read {}: {e}", model_path.display()))?;
    let model = RewardModel::from_json(&text).map_err(|e| format!("{}: {e}", model_path.display()))?;
    if model.feature_dim() != FEATURE_DIM {
        return Err(format!(
            "model has {} features, the simulator has {FEATURE_DIM}",
            model.feature_dim()
        ));
    }
    let (nx, ny) = match *resolution {
        Resolution::Square(n) => (n, n),
        Resolution::Rect([nx, ny]) => (nx, ny),
    };
    let finite = bounds.x.iter().chain(&bounds.y).all(|v| v.is_finite());
    if nx == 0 || ny == 0 || !finite || bounds.x[0] >= bounds.x[1] || bounds.y[0] >= bounds.y[1] {
        return Err("reward_grid needs a positive resolution and bounds with lo < hi".into());
    }
    let centre = |range: [f64; 2], n: usize, i: usize| range[0] + (i as f64 + 0.5) * (range[1] - range[0]) / n as f64;
    let heading = live.sim.state().theta;
    let values = (0..ny)
        .map(|j| {
            let y = centre(bounds.y, ny, j);
            (0..nx)
                .map(|i| {
                    let x = centre(bounds.x, nx, i).rem_euclid(live.scenario.length);
                    let s = CarState::new(x, y, heading);
                    features_at(&s, live.control.v, &live.scenario, live.sim.traffic())
                        .ok()
                        .map(|f| model.eval_unchecked(&f))
                })
                .collect()
        })
        .collect();
    Ok(ServerMsg::Grid { values })
}
