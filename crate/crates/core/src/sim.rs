//! Deterministic workload generator for an instrumented web application.
//!
//! The generator runs in virtual time. Every request executes its page's
//! method chain, and the sensor writer buffers the request's records and
//! flushes them as one contiguous block when the request completes: the
//! request marker first, then the header and session sensors, then one
//! duration record per method. All records of a block carry the completion
//! timestamp; `count` orders them. Blocks are written in completion order,
//! so the log is always sorted by `(timestamp, count)`.
//!
//! Three workloads are provided: crawler-like background traffic from
//! concurrent users, a username-probing burst against the login form, and a
//! dictionary timing attack with three distinct login outcomes.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::event::{CountAssigner, SensorEvent, SensorId, SensorValue};

/// 2013-05-31T11:33:20Z; arbitrary but fixed.
pub const DEFAULT_START_MS: u64 = 1_370_000_000_000;

pub const PAGE_START: &str = "start";
pub const PAGE_START_MEMBER: &str = "start-member";
pub const PAGE_NEWS: &str = "news";
pub const PAGE_ARTICLE: &str = "news-article";
pub const PAGE_SEARCH: &str = "search";
pub const PAGE_CONTACT: &str = "contact";
pub const PAGE_IMPRINT: &str = "imprint";
pub const PAGE_LOGIN_SUCCESS: &str = "login-success";
pub const PAGE_LOGIN_UNKNOWN_USER: &str = "login-unknown-user";
pub const PAGE_LOGIN_WRONG_PASSWORD: &str = "login-wrong-password";

const MARKER: &str = "org.opencms.main.OpenCmsServlet.beginRequest.0.1.0";
pub const USER_AGENT_SID: &str = "org.opencms.main.CmsRequestHeaders.getUserAgent.0.2.0";
pub const REMOTE_ADDR_SID: &str = "org.opencms.main.CmsRequestHeaders.getRemoteAddr.0.2.1";
pub const AUTH_STATE_SID: &str = "org.opencms.main.CmsSessionInfo.isAuthenticated.0.1.0";

/// First method of every login chain.
pub const LOGIN_ENTRY_SID: &str = "org.opencms.jsp.CmsJspLoginBean.login.0.0.0";
/// Method that every start-page chain passes through.
pub const START_ENTRY_SID: &str = "org.opencms.jsp.CmsJspTagContainer.doStartTag.0.0.0";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("unknown page `{0}`")]
    UnknownPage(String),
}

fn sid(s: &str) -> SensorId {
    s.parse().expect("built-in sensor id")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodTemplate {
    pub sid: SensorId,
    pub base_duration_ms: f64,
    /// Half-width of the uniform noise added to every execution.
    pub noise_ms: f64,
}

impl MethodTemplate {
    pub fn new(sid: SensorId, base_duration_ms: f64, noise_ms: f64) -> Result<Self, SimError> {
        if !(base_duration_ms >= 1.0 && base_duration_ms.is_finite()) {
            return Err(SimError::Config(format!(
                "method {sid} has base duration {base_duration_ms} ms; sub-millisecond methods are not recorded"
            )));
        }
        if !(noise_ms >= 0.0 && noise_ms.is_finite()) {
            return Err(SimError::Config(format!(
                "method {sid} has invalid noise {noise_ms}"
            )));
        }
        Ok(MethodTemplate {
            sid,
            base_duration_ms,
            noise_ms,
        })
    }

    /// One execution, rounded to the millisecond resolution of the log.
    /// Returns `None` when the execution finished below 1 ms and the sensor
    /// would stay silent.
    fn sample(&self, rng: &mut impl Rng) -> Option<f64> {
        let noise = if self.noise_ms > 0.0 {
            rng.gen_range(-self.noise_ms..=self.noise_ms)
        } else {
            0.0
        };
        let d = (self.base_duration_ms + noise).round();
        (d >= 1.0).then_some(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageTemplate {
    pub name: String,
    pub chain: Vec<MethodTemplate>,
    pub marker_sid: SensorId,
    /// Whether the requesting user holds a session.
    pub authenticated: bool,
}

impl PageTemplate {
    pub fn new(
        name: impl Into<String>,
        chain: Vec<MethodTemplate>,
        marker_sid: SensorId,
        authenticated: bool,
    ) -> Result<Self, SimError> {
        let name = name.into();
        if chain.is_empty() {
            return Err(SimError::Config(format!(
                "page `{name}` has an empty chain"
            )));
        }
        Ok(PageTemplate {
            name,
            chain,
            marker_sid,
            authenticated,
        })
    }

    /// Expected total chain duration.
    pub fn base_total_ms(&self) -> f64 {
        self.chain.iter().map(|m| m.base_duration_ms).sum()
    }
}

/// The simulated application: a set of pages.
#[derive(Debug, Clone)]
pub struct Site {
    pages: Vec<PageTemplate>,
}

impl Site {
    pub fn new(pages: Vec<PageTemplate>) -> Result<Self, SimError> {
        if pages.is_empty() {
            return Err(SimError::Config("site has no pages".into()));
        }
        Ok(Site { pages })
    }

    /// A small CMS-like site. Base durations are `3k + 1` with at most 1 ms
    /// of noise, so every execution stays inside its 3 ms bucket.
    pub fn cms() -> Site {
        fn m(s: &str, base: f64) -> MethodTemplate {
            MethodTemplate::new(sid(s), base, 1.0).expect("valid template")
        }
        fn quiet(s: &str, base: f64) -> MethodTemplate {
            MethodTemplate::new(sid(s), base, 0.0).expect("valid template")
        }
        let init = || m("org.opencms.main.CmsResourceInit.initResource.0.0.0", 61.0);
        let read = || m("org.opencms.file.CmsObject.readResource.0.0.0", 34.0);
        let load = || m("org.opencms.loader.CmsJspLoader.load.0.0.0", 202.0);
        let container = || m(START_ENTRY_SID, 301.0);
        let value = || m("org.opencms.xml.content.CmsXmlContent.getValue.0.0.0", 97.0);
        let flush = || quiet("org.opencms.flex.CmsFlexResponse.flush.0.0.0", 103.0);
        let login = || m(LOGIN_ENTRY_SID, 10.0);
        let read_user = || m("org.opencms.db.CmsSecurityManager.readUser.0.0.0", 25.0);
        let check_invalid = || {
            m(
                "org.opencms.db.CmsLoginManager.checkInvalidLogins.0.0.0",
                7.0,
            )
        };
        let message = || {
            m(
                "org.opencms.main.CmsException.getLocalizedMessage.0.0.0",
                4.0,
            )
        };
        let digest = || {
            m(
                "org.opencms.security.CmsDefaultPasswordHandler.digest.0.0.0",
                40.0,
            )
        };
        let user_settings = || quiet("org.opencms.file.CmsUserSettings.load.0.0.0", 16.0);

        let marker = sid(MARKER);
        let page = |name: &str, chain: Vec<MethodTemplate>, auth: bool| {
            PageTemplate::new(name, chain, marker.clone(), auth).expect("valid page")
        };
        let pages = vec![
            // 798 ms, at most 5 ms of noise
            page(
                PAGE_START,
                vec![init(), read(), load(), container(), value(), flush()],
                false,
            ),
            // 849 ms: the same chain plus session and user-settings lookups
            page(
                PAGE_START_MEMBER,
                vec![
                    init(),
                    read(),
                    quiet(
                        "org.opencms.main.CmsSessionManager.getSessionInfo.0.0.0",
                        19.0,
                    ),
                    user_settings(),
                    quiet(
                        "org.opencms.workplace.CmsWorkplace.initUserSettings.0.0.0",
                        16.0,
                    ),
                    load(),
                    container(),
                    value(),
                    flush(),
                ],
                true,
            ),
            page(
                PAGE_NEWS,
                vec![
                    init(),
                    read(),
                    load(),
                    m(
                        "org.opencms.file.collectors.CmsDefaultResourceCollector.getResults.0.0.0",
                        127.0,
                    ),
                    value(),
                    flush(),
                ],
                false,
            ),
            page(
                PAGE_ARTICLE,
                vec![
                    init(),
                    read(),
                    load(),
                    m(
                        "org.opencms.xml.content.CmsXmlContentFactory.unmarshal.0.0.0",
                        46.0,
                    ),
                    value(),
                    flush(),
                ],
                false,
            ),
            page(
                PAGE_SEARCH,
                vec![
                    init(),
                    m("org.opencms.search.CmsSearchIndex.search.0.0.0", 151.0),
                    m("org.opencms.search.CmsSearchResult.getExcerpt.0.0.0", 19.0),
                    load(),
                    flush(),
                ],
                false,
            ),
            page(
                PAGE_CONTACT,
                vec![
                    init(),
                    read(),
                    load(),
                    m(
                        "org.opencms.jsp.CmsJspTagInclude.includeTagAction.0.0.0",
                        40.0,
                    ),
                    flush(),
                ],
                false,
            ),
            page(
                PAGE_IMPRINT,
                vec![
                    init(),
                    read(),
                    load(),
                    flush(),
                    m("org.opencms.flex.CmsFlexCache.add.0.0.0", 13.0),
                ],
                false,
            ),
            page(
                PAGE_LOGIN_UNKNOWN_USER,
                vec![
                    init(),
                    login(),
                    read_user(),
                    check_invalid(),
                    message(),
                    load(),
                    flush(),
                ],
                false,
            ),
            page(
                PAGE_LOGIN_WRONG_PASSWORD,
                vec![
                    init(),
                    login(),
                    read_user(),
                    digest(),
                    m("org.opencms.db.CmsLoginManager.addInvalidLogin.0.0.0", 13.0),
                    check_invalid(),
                    message(),
                    load(),
                    flush(),
                ],
                false,
            ),
            page(
                PAGE_LOGIN_SUCCESS,
                vec![
                    init(),
                    login(),
                    read_user(),
                    digest(),
                    m(
                        "org.opencms.main.CmsSessionManager.addSessionInfo.0.0.0",
                        22.0,
                    ),
                    user_settings(),
                    m("org.opencms.jsp.CmsJspLoginBean.sendRedirect.0.0.0", 7.0),
                ],
                true,
            ),
        ];
        Site { pages }
    }

    pub fn pages(&self) -> &[PageTemplate] {
        &self.pages
    }

    pub fn page_index(&self, name: &str) -> Result<usize, SimError> {
        self.pages
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| SimError::UnknownPage(name.to_string()))
    }

    pub fn page(&self, name: &str) -> Result<&PageTemplate, SimError> {
        self.page_index(name).map(|i| &self.pages[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Normal,
    Probe,
    Timing,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Normal => "normal",
            ScenarioKind::Probe => "probe",
            ScenarioKind::Timing => "timing",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(ScenarioKind::Normal),
            "probe" => Ok(ScenarioKind::Probe),
            "timing" => Ok(ScenarioKind::Timing),
            _ => Err(SimError::Config(format!("unknown scenario `{s}`"))),
        }
    }
}

/// How much background traffic to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Requests starting within this many milliseconds.
    DurationMs(u64),
    /// This many requests in total.
    Requests(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub dictionary_size: usize,
    pub user_agents: usize,
    pub ips: usize,
    /// Attack requests per second.
    pub rate_per_s: f64,
    /// Offset of the first attack request from the scenario start. Defaults
    /// to 60 % of the background duration plus up to one default period of
    /// seed-dependent jitter.
    pub onset_ms: Option<u64>,
    /// Dictionary names that exist on the site (timing scenario). One of
    /// them is tried with its correct password.
    pub valid_users: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            dictionary_size: 1000,
            user_agents: 50,
            ips: 20,
            rate_per_s: 50.0,
            onset_ms: None,
            valid_users: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub budget: Budget,
    /// Concurrent background users.
    pub users: usize,
    /// How many of `users` are logged in.
    pub members: usize,
    /// Delay between two requests of one user.
    pub request_delay_ms: u64,
    pub start_ms: u64,
    pub attack: AttackSpec,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        ScenarioSpec {
            kind,
            seed,
            budget: Budget::DurationMs(600_000),
            users: 20,
            members: 6,
            request_delay_ms: 1_000,
            start_ms: DEFAULT_START_MS,
            attack: AttackSpec::default(),
        }
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = budget;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.users == 0 {
            return bad("at least one user is required");
        }
        if self.members > self.users {
            return bad("more members than users");
        }
        if self.request_delay_ms == 0 {
            return bad("request delay must be positive");
        }
        if self.kind != ScenarioKind::Normal {
            let a = &self.attack;
            if a.dictionary_size == 0 {
                return bad("dictionary must hold at least one name");
            }
            if a.user_agents == 0 || a.ips == 0 {
                return bad("attack needs at least one user agent and one address");
            }
            if !(a.rate_per_s > 0.0 && a.rate_per_s.is_finite()) {
                return bad("attack rate must be positive");
            }
            if self.kind == ScenarioKind::Timing
                && !(1..=a.dictionary_size).contains(&a.valid_users)
            {
                return bad("valid users must be between 1 and the dictionary size");
            }
        }
        Ok(())
    }

    fn background_ms(&self) -> u64 {
        match self.budget {
            Budget::DurationMs(ms) => ms,
            Budget::Requests(n) => (n as u64).div_ceil(self.users as u64) * self.request_delay_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Probe,
    Timing,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Probe => "probe",
            AttackKind::Timing => "timing",
        })
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "probe" => Ok(AttackKind::Probe),
            "timing" => Ok(AttackKind::Timing),
            _ => Err(format!("unknown attack kind `{s}`")),
        }
    }
}

/// Inclusive span of log timestamps covered by one attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackInterval {
    pub onset_ms: u64,
    pub end_ms: u64,
    pub kind: AttackKind,
}

impl AttackInterval {
    pub fn contains(&self, ts: u64) -> bool {
        (self.onset_ms..=self.end_ms).contains(&ts)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub intervals: Vec<AttackInterval>,
}

impl GroundTruth {
    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn first_onset(&self) -> Option<u64> {
        self.intervals.iter().map(|i| i.onset_ms).min()
    }
}

#[derive(Debug, Error)]
pub enum TruthError {
    #[error("ground truth line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("reading ground truth: {0}")]
    Io(#[from] std::io::Error),
}

/// Writes `onset_ms<TAB>end_ms<TAB>kind` lines.
pub fn write_truth<W: Write>(mut out: W, truth: &GroundTruth) -> std::io::Result<()> {
    for i in &truth.intervals {
        writeln!(out, "{}\t{}\t{}", i.onset_ms, i.end_ms, i.kind)?;
    }
    out.flush()
}

pub fn read_truth<R: BufRead>(source: R) -> Result<GroundTruth, TruthError> {
    let mut intervals = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| TruthError::Malformed {
            line: n + 1,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [onset, end, kind] = fields[..] else {
            return Err(bad(format!(
                "expected 3 tab-separated fields, got {}",
                fields.len()
            )));
        };
        let onset_ms = onset
            .parse()
            .map_err(|_| bad(format!("bad onset `{onset}`")))?;
        let end_ms = end.parse().map_err(|_| bad(format!("bad end `{end}`")))?;
        let kind = kind.parse().map_err(bad)?;
        intervals.push(AttackInterval {
            onset_ms,
            end_ms,
            kind,
        });
    }
    Ok(GroundTruth { intervals })
}

/// What the simulator did for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    /// Value carried by the request marker.
    pub ordinal: u32,
    pub page: String,
    pub start_ms: u64,
    /// Completion time; every record of the request carries it.
    pub timestamp: u64,
    pub total_duration_ms: f64,
    pub attack: Option<AttackKind>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub events: Vec<SensorEvent>,
    pub truth: GroundTruth,
    pub requests: Vec<RequestRecord>,
}

impl SimOutput {
    pub fn attack_requests(&self) -> impl Iterator<Item = &RequestRecord> {
        self.requests.iter().filter(|r| r.attack.is_some())
    }
}

struct Client {
    user_agent: String,
    addr: String,
}

struct Planned {
    start: u64,
    page: usize,
    client: usize,
    attack: Option<AttackKind>,
}

const ANON_CYCLE: [&str; 10] = [
    PAGE_START,
    PAGE_NEWS,
    PAGE_SEARCH,
    PAGE_ARTICLE,
    PAGE_CONTACT,
    PAGE_START,
    PAGE_IMPRINT,
    PAGE_NEWS,
    PAGE_SEARCH,
    PAGE_LOGIN_WRONG_PASSWORD,
];

const MEMBER_CYCLE: [&str; 10] = [
    PAGE_START_MEMBER,
    PAGE_NEWS,
    PAGE_SEARCH,
    PAGE_ARTICLE,
    PAGE_CONTACT,
    PAGE_START_MEMBER,
    PAGE_IMPRINT,
    PAGE_NEWS,
    PAGE_SEARCH,
    PAGE_LOGIN_SUCCESS,
];

const BROWSERS: [&str; 8] = [
    "Mozilla/5.0 (Windows NT 6.1; WOW64; rv:21.0) Gecko/20100101 Firefox/21.0",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_8_3) AppleWebKit/536.29.13 (KHTML, like Gecko) Version/6.0.4 Safari/536.29.13",
    "Mozilla/5.0 (Windows NT 6.1) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/27.0.1453.94 Safari/537.36",
    "Mozilla/5.0 (compatible; MSIE 10.0; Windows NT 6.2; Trident/6.0)",
    "Mozilla/5.0 (X11; Ubuntu; Linux x86_64; rv:21.0) Gecko/20100101 Firefox/21.0",
    "Mozilla/5.0 (iPhone; CPU iPhone OS 6_1_3 like Mac OS X) AppleWebKit/536.26 (KHTML, like Gecko) Mobile/10B329",
    "Opera/9.80 (Windows NT 6.1; WOW64) Presto/2.12.388 Version/12.15",
    "Mozilla/5.0 (Linux; U; Android 4.1.2; de-de; GT-I9300) AppleWebKit/534.30 (KHTML, like Gecko) Version/4.0 Mobile Safari/534.30",
];

fn agent(i: usize) -> String {
    format!(
        "{} build/{}",
        BROWSERS[i % BROWSERS.len()],
        i / BROWSERS.len()
    )
}

struct Generator<'a> {
    site: &'a Site,
    rng: ChaCha8Rng,
    clients: Vec<Client>,
    plan: Vec<Planned>,
}

impl<'a> Generator<'a> {
    fn new(site: &'a Site, seed: u64) -> Self {
        Generator {
            site,
            rng: ChaCha8Rng::seed_from_u64(seed),
            clients: Vec::new(),
            plan: Vec::new(),
        }
    }

    fn add_client(&mut self, user_agent: String, addr: String) -> usize {
        self.clients.push(Client { user_agent, addr });
        self.clients.len() - 1
    }

    fn background(&mut self, spec: &ScenarioSpec) -> Result<(), SimError> {
        let anon: Vec<usize> = ANON_CYCLE
            .iter()
            .map(|p| self.site.page_index(p))
            .collect::<Result<_, _>>()?;
        let member: Vec<usize> = MEMBER_CYCLE
            .iter()
            .map(|p| self.site.page_index(p))
            .collect::<Result<_, _>>()?;
        let delay = spec.request_delay_ms;
        let mut users = Vec::with_capacity(spec.users);
        for u in 0..spec.users {
            let client = self.add_client(agent(u), format!("10.17.{}.{}", u / 200, 20 + u % 200));
            let phase = self.rng.gen_range(0..delay);
            let offset = self.rng.gen_range(0..ANON_CYCLE.len());
            let cycle = if u < spec.members { &member } else { &anon };
            users.push((client, phase, offset, cycle));
        }
        let horizon = spec.start_ms + spec.background_ms();
        let mut planned = Vec::new();
        for k in 0.. {
            let mut any = false;
            for &(client, phase, offset, cycle) in &users {
                let start = spec.start_ms + phase + k as u64 * delay;
                if start >= horizon {
                    continue;
                }
                any = true;
                planned.push(Planned {
                    start,
                    page: cycle[(offset + k) % cycle.len()],
                    client,
                    attack: None,
                });
            }
            if !any {
                break;
            }
        }
        planned.sort_by_key(|p| p.start);
        if let Budget::Requests(n) = spec.budget {
            planned.truncate(n);
        }
        self.plan.extend(planned);
        Ok(())
    }

    /// Schedules one attack request per outcome page at `rate_per_s`.
    fn burst(&mut self, spec: &ScenarioSpec, outcomes: &[usize], kind: AttackKind) {
        let a = &spec.attack;
        let onset = match a.onset_ms {
            Some(ms) => ms,
            None => spec.background_ms() * 3 / 5 + self.rng.gen_range(0..10_000),
        };
        let agents: Vec<String> = (0..a.user_agents).map(|i| agent(1000 + i)).collect();
        let addrs: Vec<String> = (0..a.ips)
            .map(|i| format!("192.168.{}.{}", 2 + i / 250, 1 + i % 250))
            .collect();
        let spacing = 1000.0 / a.rate_per_s;
        for (i, &page) in outcomes.iter().enumerate() {
            let ua = agents[self.rng.gen_range(0..agents.len())].clone();
            let ip = addrs[self.rng.gen_range(0..addrs.len())].clone();
            let client = self.add_client(ua, ip);
            self.plan.push(Planned {
                start: spec.start_ms + onset + (i as f64 * spacing).round() as u64,
                page,
                client,
                attack: Some(kind),
            });
        }
    }

    fn run(mut self) -> SimOutput {
        struct Done {
            start: u64,
            end: u64,
            seq: usize,
            page: usize,
            client: usize,
            attack: Option<AttackKind>,
            durations: Vec<Option<f64>>,
        }
        let plan = std::mem::take(&mut self.plan);
        let mut done: Vec<Done> = plan
            .into_iter()
            .enumerate()
            .map(|(seq, p)| {
                let durations: Vec<Option<f64>> = self.site.pages[p.page]
                    .chain
                    .iter()
                    .map(|m| m.sample(&mut self.rng))
                    .collect();
                let total: f64 = durations.iter().flatten().sum();
                Done {
                    start: p.start,
                    end: p.start + total as u64,
                    seq,
                    page: p.page,
                    client: p.client,
                    attack: p.attack,
                    durations,
                }
            })
            .collect();
        done.sort_by_key(|d| (d.end, d.start, d.seq));

        let auth_sid = sid(AUTH_STATE_SID);
        let ua_sid = sid(USER_AGENT_SID);
        let addr_sid = sid(REMOTE_ADDR_SID);
        let mut counts = CountAssigner::new();
        let mut events = Vec::new();
        let mut requests = Vec::with_capacity(done.len());
        let mut truth: Vec<AttackInterval> = Vec::new();
        for (ordinal, d) in done.into_iter().enumerate() {
            let ordinal = ordinal as u32;
            let page = &self.site.pages[d.page];
            let client = &self.clients[d.client];
            let ts = d.end;
            let mut emit = |sid: &SensorId, value: SensorValue| {
                events.push(SensorEvent::new(ts, counts.next(ts), sid.clone(), value));
            };
            emit(&page.marker_sid, SensorValue::State32(ordinal));
            emit(&ua_sid, SensorValue::Text(client.user_agent.clone()));
            emit(&addr_sid, SensorValue::Text(client.addr.clone()));
            emit(&auth_sid, SensorValue::State32(page.authenticated as u32));
            for (m, dur) in page.chain.iter().zip(&d.durations) {
                if let Some(dur) = dur {
                    emit(&m.sid, SensorValue::Numeric64(*dur));
                }
            }
            if let Some(kind) = d.attack {
                match truth.iter_mut().find(|i| i.kind == kind) {
                    Some(i) => {
                        i.onset_ms = i.onset_ms.min(ts);
                        i.end_ms = i.end_ms.max(ts);
                    }
                    None => truth.push(AttackInterval {
                        onset_ms: ts,
                        end_ms: ts,
                        kind,
                    }),
                }
            }
            requests.push(RequestRecord {
                ordinal,
                page: page.name.clone(),
                start_ms: d.start,
                timestamp: ts,
                total_duration_ms: d.durations.iter().flatten().sum(),
                attack: d.attack,
            });
        }
        SimOutput {
            events,
            truth: GroundTruth { intervals: truth },
            requests,
        }
    }
}

/// Background traffic only.
pub fn simulate_normal(site: &Site, spec: &ScenarioSpec) -> Result<SimOutput, SimError> {
    spec.validate()?;
    let mut g = Generator::new(site, spec.seed);
    g.background(spec)?;
    Ok(g.run())
}

/// Background traffic plus a burst of login attempts, one per dictionary
/// name. Exactly one name exists, so all but one attempt fail with an
/// unknown user.
pub fn simulate_probe(site: &Site, spec: &ScenarioSpec) -> Result<SimOutput, SimError> {
    spec.validate()?;
    let unknown = site.page_index(PAGE_LOGIN_UNKNOWN_USER)?;
    let wrong = site.page_index(PAGE_LOGIN_WRONG_PASSWORD)?;
    let mut g = Generator::new(site, spec.seed);
    g.background(spec)?;
    let n = spec.attack.dictionary_size;
    let valid = g.rng.gen_range(0..n);
    let outcomes: Vec<usize> = (0..n)
        .map(|i| if i == valid { wrong } else { unknown })
        .collect();
    g.burst(spec, &outcomes, AttackKind::Probe);
    Ok(g.run())
}

/// Background traffic plus a dictionary attack whose attempts end in one of
/// three login outcomes: unknown user, wrong password, or success.
pub fn simulate_timing(site: &Site, spec: &ScenarioSpec) -> Result<SimOutput, SimError> {
    spec.validate()?;
    let unknown = site.page_index(PAGE_LOGIN_UNKNOWN_USER)?;
    let wrong = site.page_index(PAGE_LOGIN_WRONG_PASSWORD)?;
    let success = site.page_index(PAGE_LOGIN_SUCCESS)?;
    let mut g = Generator::new(site, spec.seed);
    g.background(spec)?;
    let n = spec.attack.dictionary_size;
    let valid = sample(&mut g.rng, n, spec.attack.valid_users).into_vec();
    let mut outcomes = vec![unknown; n];
    for &i in &valid {
        outcomes[i] = wrong;
    }
    outcomes[valid[0]] = success;
    g.burst(spec, &outcomes, AttackKind::Timing);
    Ok(g.run())
}

pub fn simulate(site: &Site, spec: &ScenarioSpec) -> Result<SimOutput, SimError> {
    match spec.kind {
        ScenarioKind::Normal => simulate_normal(site, spec),
        ScenarioKind::Probe => simulate_probe(site, spec),
        ScenarioKind::Timing => simulate_timing(site, spec),
    }
}

/// A sequential crawl: `requests_per_page` requests to each page in turn,
/// each starting `delay_ms` after the previous one completed.
pub fn simulate_crawl(
    site: &Site,
    pages: &[&str],
    requests_per_page: usize,
    delay_ms: u64,
    seed: u64,
) -> Result<SimOutput, SimError> {
    let mut g = Generator::new(site, seed);
    let client = g.add_client(agent(0), "10.17.0.20".into());
    let mut t = DEFAULT_START_MS;
    for name in pages {
        let page = site.page_index(name)?;
        for _ in 0..requests_per_page {
            g.plan.push(Planned {
                start: t,
                page,
                client,
                attack: None,
            });
            // upper bound of the request's duration keeps starts ordered
            let longest: f64 = site.pages[page]
                .chain
                .iter()
                .map(|m| m.base_duration_ms + m.noise_ms + 1.0)
                .sum();
            t += longest.ceil() as u64 + delay_ms;
        }
    }
    Ok(g.run())
}
