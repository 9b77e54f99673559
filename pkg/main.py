from shepherd.cli import main

raise SystemExit(main())
