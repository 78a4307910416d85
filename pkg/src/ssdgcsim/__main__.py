from ssdgcsim.cli import main

raise SystemExit(main())
